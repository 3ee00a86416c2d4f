//! Fenwick tree over nonnegative integer weights with swap-removal, used to
//! pick a family with probability proportional to its size.

#[derive(Debug, Clone, Default)]
pub struct SumTree {
    tree: Vec<u64>,
    weights: Vec<u64>,
    total: u64,
}

impl SumTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn weight(&self, i: usize) -> u64 {
        self.weights[i]
    }

    fn capacity(&self) -> usize {
        self.tree.len()
    }

    fn rebuild(&mut self, cap: usize) {
        self.tree = vec![0; cap];
        for (i, &w) in self.weights.iter().enumerate() {
            let mut k = i + 1;
            while k <= cap {
                self.tree[k - 1] += w;
                k += k & k.wrapping_neg();
            }
        }
    }

    fn add(&mut self, i: usize, delta: i64) {
        let cap = self.capacity();
        let mut k = i + 1;
        while k <= cap {
            self.tree[k - 1] = self.tree[k - 1].wrapping_add(delta as u64);
            k += k & k.wrapping_neg();
        }
        self.total = self.total.wrapping_add(delta as u64);
    }

    pub fn push(&mut self, w: u64) {
        if self.weights.len() == self.capacity() {
            self.weights.push(w);
            let cap = (self.capacity() * 2).max(16);
            self.rebuild(cap);
            self.total += w;
        } else {
            self.weights.push(w);
            let i = self.weights.len() - 1;
            self.add(i, w as i64);
        }
    }

    pub fn set(&mut self, i: usize, w: u64) {
        let old = self.weights[i];
        if old != w {
            self.weights[i] = w;
            self.add(i, w as i64 - old as i64);
        }
    }

    /// Removes slot `i`, moving the last slot into its place (mirrors `Vec::swap_remove`).
    pub fn swap_remove(&mut self, i: usize) {
        let last = self.weights.len() - 1;
        if i != last {
            let wl = self.weights[last];
            self.set(i, wl);
        }
        self.set(last, 0);
        self.weights.pop();
    }

    /// Smallest index whose inclusive prefix sum exceeds `target` (`target < total`).
    pub fn find(&self, mut target: u64) -> usize {
        debug_assert!(target < self.total);
        let cap = self.capacity();
        let mut pos = 0usize;
        let mut step = cap.next_power_of_two();
        if step > cap {
            step >>= 1;
        }
        while step > 0 {
            let next = pos + step;
            if next <= cap && self.tree[next - 1] <= target {
                target -= self.tree[next - 1];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }

    pub fn clear(&mut self) {
        self.tree.clear();
        self.weights.clear();
        self.total = 0;
    }
}
