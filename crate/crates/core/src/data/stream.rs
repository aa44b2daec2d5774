use serde::{Deserialize, Serialize};

use super::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::numerics::{permutation, RngStream};

/// How classes are assigned to incremental positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    Identity,
    Given(Vec<usize>),
    Shuffled(RngStream),
}

/// One incremental task. Labels inside `train` and `test` are already in the
/// incremental label space, so `classes` is a contiguous range of positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub classes: Vec<usize>,
    pub train: FeatureDataset,
    pub test: FeatureDataset,
}

/// Ordered partition of the classes into tasks with disjoint class sets.
///
/// Internally every class is relabeled to its position in the class order,
/// so the head's output `j` always corresponds to incremental class `j`.
/// [`TaskStream::original_class`] maps back to file labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    tasks: Vec<Task>,
    step_size: usize,
    class_order: Vec<usize>,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn step_size(&self) -> usize {
        self.step_size
    }

    pub fn num_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn class_order(&self) -> &[usize] {
        &self.class_order
    }

    pub fn original_class(&self, incremental: usize) -> usize {
        self.class_order[incremental]
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    /// Task at 1-based step `t`.
    pub fn task(&self, t: usize) -> Result<&Task> {
        self.check_step(t)?;
        Ok(&self.tasks[t - 1])
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.tasks.len() {
            Err(Error::StepOutOfRange {
                step: t,
                total: self.tasks.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Number of classes seen after step `t`.
    pub fn seen_after(&self, t: usize) -> usize {
        self.tasks[..t.min(self.tasks.len())]
            .iter()
            .map(|task| task.classes.len())
            .sum()
    }

    /// Task that introduced incremental class `c`.
    pub fn task_of_class(&self, c: usize) -> usize {
        self.tasks
            .iter()
            .position(|task| task.classes.contains(&c))
            .map(|i| i + 1)
            .expect("class belongs to some task")
    }

    /// Union of the test sets of tasks `1..=t`.
    pub fn test_union(&self, t: usize) -> Result<FeatureDataset> {
        self.check_step(t)?;
        let parts: Vec<&FeatureDataset> = self.tasks[..t].iter().map(|task| &task.test).collect();
        FeatureDataset::concat(&parts)
    }
}

/// Partition classes into tasks of `k` classes. The final task absorbs the
/// remainder when `k` does not divide the class count.
pub fn split_tasks(train: &FeatureDataset, test: &FeatureDataset, k: usize, order: &ClassOrder) -> Result<TaskStream> {
    let num_classes = train.num_classes();
    if k < 2 || k > num_classes {
        return Err(Error::InvalidStepSize { step: k, num_classes });
    }
    if test.num_classes() != num_classes {
        return Err(Error::InvalidDataset(format!(
            "train has {num_classes} classes, test has {}",
            test.num_classes()
        )));
    }
    if test.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: test.dim(),
        });
    }

    let class_order = match order {
        ClassOrder::Identity => (0..num_classes).collect(),
        ClassOrder::Given(perm) => {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != (0..num_classes).collect::<Vec<_>>() {
                return Err(Error::Config(format!(
                    "class order is not a permutation of 0..{num_classes}"
                )));
            }
            perm.clone()
        }
        ClassOrder::Shuffled(stream) => permutation(num_classes, &mut stream.rng()),
    };
    let mut position = vec![0; num_classes];
    for (pos, &c) in class_order.iter().enumerate() {
        position[c] = pos;
    }

    let train = train.relabel(&position, num_classes);
    let test = test.relabel(&position, num_classes);
    let train_by_class = train.indices_by_class();
    let test_by_class = test.indices_by_class();
    if let Some(c) = train_by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(class_order[c]));
    }

    let tasks = (0..num_classes)
        .step_by(k)
        .map(|start| start..(start + k).min(num_classes))
        .map(|range| {
            let classes: Vec<usize> = range.collect();
            let rows = |by_class: &[Vec<usize>]| -> Vec<usize> {
                let mut idx: Vec<usize> = classes.iter().flat_map(|&c| by_class[c].iter().copied()).collect();
                idx.sort_unstable();
                idx
            };
            Task {
                train: train.select(&rows(&train_by_class)),
                test: test.select(&rows(&test_by_class)),
                classes,
            }
        })
        .collect();

    Ok(TaskStream {
        tasks,
        step_size: k,
        class_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn ds(num_classes: usize, per_class: usize) -> FeatureDataset {
        let n = num_classes * per_class;
        let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
        let data: Vec<f64> = (0..n).map(|i| i as f64).collect();
        FeatureDataset::new(Matrix::from_vec(n, 1, data).unwrap(), labels, num_classes).unwrap()
    }

    fn sizes(s: &TaskStream) -> Vec<usize> {
        s.tasks().iter().map(|t| t.classes.len()).collect()
    }

    #[test]
    fn even_split() {
        let s = split_tasks(&ds(100, 2), &ds(100, 1), 10, &ClassOrder::Identity).unwrap();
        assert_eq!(sizes(&s), vec![10; 10]);
    }

    #[test]
    fn identity_order_six_by_two() {
        let s = split_tasks(&ds(6, 3), &ds(6, 1), 2, &ClassOrder::Identity).unwrap();
        let classes: Vec<Vec<usize>> = s.tasks().iter().map(|t| t.classes.clone()).collect();
        assert_eq!(classes, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert!(s.tasks()[1].train.labels().iter().all(|&l| l == 2 || l == 3));
    }

    #[test]
    fn remainder_goes_last() {
        let s = split_tasks(&ds(7, 2), &ds(7, 1), 3, &ClassOrder::Identity).unwrap();
        assert_eq!(sizes(&s), vec![3, 3, 1]);
    }

    #[test]
    fn step_larger_than_classes() {
        assert!(matches!(
            split_tasks(&ds(4, 2), &ds(4, 1), 5, &ClassOrder::Identity),
            Err(Error::InvalidStepSize { .. })
        ));
    }

    #[test]
    fn shuffled_order_relabels_consistently() {
        let train = ds(8, 3);
        let s = split_tasks(&train, &ds(8, 1), 2, &ClassOrder::Shuffled(RngStream::new(3, "order"))).unwrap();
        // Row value v has original class v % 8; its incremental label must map back.
        for task in s.tasks() {
            for (i, &l) in task.train.labels().iter().enumerate() {
                let original = task.train.row(i)[0] as usize % 8;
                assert_eq!(s.original_class(l), original);
            }
        }
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        for k in 2..=13 {
            let s = split_tasks(&ds(13, 2), &ds(13, 1), k, &ClassOrder::Identity).unwrap();
            let mut seen = [0u32; 13];
            for t in s.tasks() {
                for &c in &t.classes {
                    seen[c] += 1;
                }
                assert!(t.train.labels().iter().all(|l| t.classes.contains(l)));
                assert!(t.test.labels().iter().all(|l| t.classes.contains(l)));
            }
            assert!(seen.iter().all(|&n| n == 1), "k={k}");
            assert_eq!(s.num_tasks(), 13usize.div_ceil(k));
        }
    }
}
