/// Fixed-universe set of time indices `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    words: Vec<u64>,
    len: usize,
}

impl IndexSet {
    pub fn empty(len: usize) -> Self {
        IndexSet { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn singleton(len: usize, index: usize) -> Self {
        let mut s = Self::empty(len);
        s.insert(index);
        s
    }

    pub fn universe(&self) -> usize {
        self.len
    }

    pub fn insert(&mut self, index: usize) {
        assert!(index < self.len, "index {index} outside 0..{}", self.len);
        self.words[index / 64] |= 1 << (index % 64);
    }

    pub fn contains(&self, index: usize) -> bool {
        index < self.len && self.words[index / 64] & (1 << (index % 64)) != 0
    }

    pub fn union_with(&mut self, other: &IndexSet) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn is_superset(&self, other: &IndexSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| b & !a == 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.contains(i))
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}
