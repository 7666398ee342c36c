use serde::{Deserialize, Serialize};

/// Dense `eds × rats` table indexed by `(u, l)`, stored row-major by ED.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkMatrix<V> {
    eds: usize,
    rats: usize,
    data: Vec<V>,
}

impl<V: Clone> LinkMatrix<V> {
    pub fn filled(eds: usize, rats: usize, value: V) -> Self {
        Self {
            eds,
            rats,
            data: vec![value; eds * rats],
        }
    }

    pub fn from_fn(eds: usize, rats: usize, mut f: impl FnMut(usize, usize) -> V) -> Self {
        let mut data = Vec::with_capacity(eds * rats);
        for u in 0..eds {
            for l in 0..rats {
                data.push(f(u, l));
            }
        }
        Self { eds, rats, data }
    }
}

impl<V> LinkMatrix<V> {
    pub fn eds(&self) -> usize {
        self.eds
    }

    pub fn rats(&self) -> usize {
        self.rats
    }

    #[inline]
    pub fn get(&self, u: usize, l: usize) -> &V {
        debug_assert!(u < self.eds && l < self.rats);
        &self.data[u * self.rats + l]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, l: usize) -> &mut V {
        debug_assert!(u < self.eds && l < self.rats);
        &mut self.data[u * self.rats + l]
    }

    #[inline]
    pub fn set(&mut self, u: usize, l: usize, v: V) {
        *self.get_mut(u, l) = v;
    }

    pub fn row(&self, u: usize) -> &[V] {
        &self.data[u * self.rats..(u + 1) * self.rats]
    }

    /// Row-major view, ED by ED.
    pub fn as_slice(&self) -> &[V] {
        &self.data
    }

    pub fn same_shape<W>(&self, other: &LinkMatrix<W>) -> bool {
        self.eds == other.eds && self.rats == other.rats
    }
}

impl<V: Copy> LinkMatrix<V> {
    #[inline]
    pub fn at(&self, u: usize, l: usize) -> V {
        *self.get(u, l)
    }

    pub fn column(&self, l: usize) -> Vec<V> {
        (0..self.eds).map(|u| self.at(u, l)).collect()
    }
}
