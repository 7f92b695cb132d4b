//! Hierarchical squared-amplitude trees over rows, classes and the whole matrix.
//!
//! A tree keeps its signed leaf values next to a flat heap-ordered array of
//! squared sums: node 1 is the root, node `k` has children `2k` and `2k + 1`,
//! and the leaves start at the first power of two not below the leaf count.

use std::io::{Read, Write};

use faer::MatRef;
use rand::Rng;

use crate::error::{Error, Result};
use crate::snapshot::{Reader, Writer};

#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeTree {
    values: Vec<f64>,
    sums: Vec<f64>,
}

impl AmplitudeTree {
    pub fn new(values: &[f64]) -> Self {
        let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
        Self::with_squares(values, &squares)
    }

    /// Builds a tree whose leaf squares are given explicitly, so that cached
    /// squared norms are stored without a square-root round trip.
    pub fn with_squares(values: &[f64], squares: &[f64]) -> Self {
        assert_eq!(values.len(), squares.len());
        let cap = values.len().max(1).next_power_of_two();
        let mut sums = vec![0.0; 2 * cap];
        sums[cap..cap + values.len()].copy_from_slice(squares);
        for k in (1..cap).rev() {
            sums[k] = sums[2 * k] + sums[2 * k + 1];
        }
        Self {
            values: values.to_vec(),
            sums,
        }
    }

    fn cap(&self) -> usize {
        self.sums.len() / 2
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.cap().trailing_zeros() as usize
    }

    /// Sum of the squared leaves.
    pub fn total(&self) -> f64 {
        self.sums[1]
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Heap-ordered node array; index 0 is unused.
    pub fn nodes(&self) -> &[f64] {
        &self.sums
    }

    /// Number of tree nodes, padding leaves included.
    pub fn node_count(&self) -> usize {
        self.sums.len() - 1
    }

    /// Replaces leaf `i` and recomputes its ancestors. Returns the number of
    /// nodes written.
    pub fn set(&mut self, i: usize, value: f64) -> usize {
        self.set_with_square(i, value, value * value)
    }

    pub fn set_with_square(&mut self, i: usize, value: f64, square: f64) -> usize {
        self.values[i] = value;
        let mut k = self.cap() + i;
        self.sums[k] = square;
        let mut touched = 1;
        while k > 1 {
            k /= 2;
            self.sums[k] = self.sums[2 * k] + self.sums[2 * k + 1];
            touched += 1;
        }
        touched
    }

    /// Signed unit-norm amplitudes read off the leaf squares.
    pub fn amplitudes(&self) -> Result<Vec<f64>> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::ZeroVector("tree with zero total weight".into()));
        }
        let cap = self.cap();
        Ok((0..self.len())
            .map(|i| {
                let a = (self.sums[cap + i] / total).sqrt();
                if self.values[i] < 0.0 {
                    -a
                } else {
                    a
                }
            })
            .collect())
    }

    /// Draws leaf `i` with probability `leaf²/total` by a root-to-leaf walk.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        let total = self.total();
        if self.is_empty() || total <= 0.0 {
            return Err(Error::ZeroVector("cannot sample from a zero-weight tree".into()));
        }
        let cap = self.cap();
        let mut u = rng.random::<f64>() * total;
        let mut k = 1;
        while k < cap {
            let left = self.sums[2 * k];
            let right = self.sums[2 * k + 1];
            if (u < left && left > 0.0) || right <= 0.0 {
                k *= 2;
            } else {
                u = (u - left).max(0.0);
                k = 2 * k + 1;
            }
        }
        Ok((k - cap).min(self.len() - 1))
    }

    /// Checks the parent-sum invariant; returns the largest relative violation.
    pub fn audit(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 1..self.cap() {
            let want = self.sums[2 * k] + self.sums[2 * k + 1];
            if self.sums[k] != want {
                worst = worst.max((self.sums[k] - want).abs() / want.max(f64::MIN_POSITIVE));
            }
        }
        worst
    }

    fn write<W: Write>(&self, w: &mut Writer<W>) -> Result<()> {
        w.f64s(&self.values)?;
        w.f64s(&self.sums)
    }

    fn read<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        let values = r.f64s()?;
        let sums = r.f64s()?;
        let cap = values.len().max(1).next_power_of_two();
        if sums.len() != 2 * cap {
            return Err(Error::Snapshot(format!(
                "tree with {} leaves has {} nodes",
                values.len(),
                sums.len()
            )));
        }
        Ok(Self { values, sums })
    }
}

/// Amplitude trees for every row, every class and the class norms.
#[derive(Clone, Debug, PartialEq)]
pub struct QramStore {
    d: usize,
    labels: Vec<usize>,
    /// Position of each row inside its class tree.
    position: Vec<usize>,
    members: Vec<Vec<usize>>,
    row_trees: Vec<AmplitudeTree>,
    class_trees: Vec<AmplitudeTree>,
    root_tree: AmplitudeTree,
}

fn class_tree(row_trees: &[AmplitudeTree], members: &[usize]) -> AmplitudeTree {
    let sq: Vec<f64> = members.iter().map(|&i| row_trees[i].total()).collect();
    let norms: Vec<f64> = sq.iter().map(|s| s.sqrt()).collect();
    AmplitudeTree::with_squares(&norms, &sq)
}

fn root_tree(class_trees: &[AmplitudeTree]) -> AmplitudeTree {
    let sq: Vec<f64> = class_trees.iter().map(|t| t.total()).collect();
    let norms: Vec<f64> = sq.iter().map(|s| s.sqrt()).collect();
    AmplitudeTree::with_squares(&norms, &sq)
}

impl QramStore {
    pub fn build(rows: MatRef<'_, f64>, labels: &[usize], classes: usize) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::invalid("cannot store an empty matrix"));
        }
        if rows.nrows() != labels.len() {
            return Err(Error::invalid("row and label counts differ"));
        }
        let mut members = vec![Vec::new(); classes];
        let mut position = Vec::with_capacity(labels.len());
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::IndexOutOfRange(format!("label {l} at row {i}")));
            }
            position.push(members[l].len());
            members[l].push(i);
        }
        let mut buf = vec![0.0; rows.ncols()];
        let row_trees: Vec<AmplitudeTree> = (0..rows.nrows())
            .map(|i| {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = rows[(i, j)];
                }
                AmplitudeTree::new(&buf)
            })
            .collect();
        let class_trees: Vec<AmplitudeTree> = members.iter().map(|m| class_tree(&row_trees, m)).collect();
        let root_tree = root_tree(&class_trees);
        Ok(Self {
            d: rows.ncols(),
            labels: labels.to_vec(),
            position,
            members,
            row_trees,
            class_trees,
            root_tree,
        })
    }

    pub fn n(&self) -> usize {
        self.row_trees.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> usize {
        self.class_trees.len()
    }

    pub fn class_size(&self, k: usize) -> usize {
        self.members[k].len()
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn row_tree(&self, i: usize) -> &AmplitudeTree {
        &self.row_trees[i]
    }

    pub fn class_tree(&self, k: usize) -> &AmplitudeTree {
        &self.class_trees[k]
    }

    pub fn root_tree(&self) -> &AmplitudeTree {
        &self.root_tree
    }

    /// `‖X‖_F²`.
    pub fn frobenius_sq(&self) -> f64 {
        self.root_tree.total()
    }

    /// `‖X_k‖_F²`.
    pub fn class_frobenius_sq(&self, k: usize) -> f64 {
        self.class_trees[k].total()
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        self.row_trees[i].total()
    }

    pub fn entry(&self, i: usize, j: usize) -> Result<f64> {
        self.check(i, j)?;
        Ok(self.row_trees[i].value(j))
    }

    pub fn node_count(&self) -> usize {
        self.row_trees.iter().map(AmplitudeTree::node_count).sum::<usize>()
            + self.class_trees.iter().map(AmplitudeTree::node_count).sum::<usize>()
            + self.root_tree.node_count()
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.n() || j >= self.d {
            return Err(Error::IndexOutOfRange(format!(
                "entry ({i}, {j}) outside {} x {}",
                self.n(),
                self.d
            )));
        }
        Ok(())
    }

    /// Writes one entry and repairs every tree above it. Returns the number of
    /// nodes written.
    pub fn update_entry(&mut self, i: usize, j: usize, value: f64) -> Result<usize> {
        self.check(i, j)?;
        let mut touched = self.row_trees[i].set(j, value);
        let k = self.labels[i];
        let sq = self.row_trees[i].total();
        touched += self.class_trees[k].set_with_square(self.position[i], sq.sqrt(), sq);
        let csq = self.class_trees[k].total();
        touched += self.root_tree.set_with_square(k, csq.sqrt(), csq);
        Ok(touched)
    }

    /// `x(i)/‖x(i)‖`.
    pub fn row_amplitudes(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange(format!("row {i}")));
        }
        self.row_trees[i]
            .amplitudes()
            .map_err(|_| Error::ZeroVector(format!("row {i} is zero")))
    }

    /// `‖x(i)‖/‖X_k‖_F` over the members of class `k`, in row order.
    pub fn class_norm_amplitudes(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.classes() {
            return Err(Error::IndexOutOfRange(format!("class {k}")));
        }
        self.class_trees[k]
            .amplitudes()
            .map_err(|_| Error::ZeroVector(format!("class {k} has zero norm")))
    }

    /// Samples a member of class `k` with probability `‖x(i)‖²/‖X_k‖_F²`.
    pub fn sample_row_index<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<usize> {
        if k >= self.classes() {
            return Err(Error::IndexOutOfRange(format!("class {k}")));
        }
        if self.members[k].is_empty() {
            return Err(Error::invalid(format!("class {k} is empty")));
        }
        let pos = self.class_trees[k].sample(rng)?;
        Ok(self.members[k][pos])
    }

    /// Largest parent-sum violation over all trees, relative.
    pub fn audit(&self) -> f64 {
        self.row_trees
            .iter()
            .chain(&self.class_trees)
            .chain(std::iter::once(&self.root_tree))
            .map(AmplitudeTree::audit)
            .fold(0.0, f64::max)
    }

    const MAGIC: &'static [u8; 8] = b"QRAMSTR1";

    /// Header `{n, d, K, class sizes}` followed by the class member lists and
    /// every tree's leaf and node arrays.
    pub fn save<W: Write>(&self, out: W) -> Result<W> {
        let mut w = Writer::new(out);
        w.bytes(Self::MAGIC)?;
        w.usize(self.n())?;
        w.usize(self.d)?;
        w.usize(self.classes())?;
        for m in &self.members {
            w.usize(m.len())?;
        }
        for m in &self.members {
            w.usizes(m)?;
        }
        for t in self.row_trees.iter().chain(&self.class_trees) {
            t.write(&mut w)?;
        }
        self.root_tree.write(&mut w)?;
        w.finish()
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input);
        r.expect_magic(Self::MAGIC)?;
        let n = r.len()?;
        let d = r.len()?;
        let k = r.len()?;
        let sizes: Vec<usize> = (0..k).map(|_| r.len()).collect::<Result<_>>()?;
        let members: Vec<Vec<usize>> = (0..k).map(|_| r.usizes()).collect::<Result<_>>()?;
        let mut labels = vec![usize::MAX; n];
        let mut position = vec![0; n];
        for (c, m) in members.iter().enumerate() {
            if m.len() != sizes[c] {
                return Err(Error::Snapshot(format!("class {c} size mismatch")));
            }
            for (p, &i) in m.iter().enumerate() {
                if i >= n || labels[i] != usize::MAX {
                    return Err(Error::Snapshot(format!("bad member {i} in class {c}")));
                }
                labels[i] = c;
                position[i] = p;
            }
        }
        if labels.contains(&usize::MAX) {
            return Err(Error::Snapshot("some rows belong to no class".into()));
        }
        let row_trees = (0..n).map(|_| AmplitudeTree::read(&mut r)).collect::<Result<Vec<_>>>()?;
        let class_trees = (0..k).map(|_| AmplitudeTree::read(&mut r)).collect::<Result<Vec<_>>>()?;
        let root_tree = AmplitudeTree::read(&mut r)?;
        if row_trees.iter().any(|t| t.len() != d) || class_trees.iter().zip(&sizes).any(|(t, &s)| t.len() != s) {
            return Err(Error::Snapshot("tree sizes disagree with the header".into()));
        }
        Ok(Self {
            d,
            labels,
            position,
            members,
            row_trees,
            class_trees,
            root_tree,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    #[test]
    fn row_three_four() {
        let t = AmplitudeTree::new(&[3.0, 4.0]);
        assert_eq!(t.nodes()[1..], [25.0, 9.0, 16.0]);
        assert_eq!(t.amplitudes().unwrap(), vec![0.6, 0.8]);
    }

    #[test]
    fn identity_store() {
        let m = Mat::<f64>::identity(4, 4);
        let s = QramStore::build(m.as_ref(), &[0, 0, 1, 1], 2).unwrap();
        for i in 0..4 {
            assert_eq!(s.row_norm_sq(i), 1.0);
        }
        assert_eq!(s.frobenius_sq(), 4.0);
    }

    #[test]
    fn zero_row_fails() {
        let m = Mat::<f64>::zeros(1, 3);
        let s = QramStore::build(m.as_ref(), &[0], 1).unwrap();
        assert!(matches!(s.row_amplitudes(0), Err(Error::ZeroVector(_))));
    }

    #[test]
    fn update_to_zero() {
        let m = Mat::from_fn(2, 2, |i, j| if i == 0 && j == 1 { 2.0 } else if i == 1 { 1.0 } else { 0.0 });
        let mut s = QramStore::build(m.as_ref(), &[0, 0], 1).unwrap();
        s.update_entry(0, 1, 0.0).unwrap();
        assert_eq!(s.row_norm_sq(0), 0.0);
        assert_eq!(s.class_frobenius_sq(0), 2.0);
        assert_eq!(s.entry(0, 1).unwrap(), 0.0);
    }
}
