//! Task-ordered data streams.
//!
//! A [`TaskStream`] holds the training samples of every task back to back
//! (shuffled within each task) plus one held-out test set per task. The
//! learner only ever sees [`Batch`]es; the `ends_task` flag exists for the
//! evaluation harness.
//!
//! Dataset CSV layout (UTF-8, LF, header required):
//!
//! ```text
//! task_id,split,label,f0,f1,...,f{d-1}
//! 0,train,1,0.25,-1.5,...
//! ```
//!
//! `split` is `train` or `test`. Tasks are ordered by ascending `task_id`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::Sample;
use crate::numeric::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskStreamSpec {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Distance of every class mean from the origin.
    pub mean_radius: f64,
    /// Per-coordinate standard deviation around the class mean.
    pub stddev: f64,
}

impl Default for TaskStreamSpec {
    fn default() -> Self {
        Self {
            num_tasks: 5,
            classes_per_task: 2,
            dim: 20,
            train_per_class: 1000,
            test_per_class: 100,
            mean_radius: 3.0,
            stddev: 1.0,
        }
    }
}

impl TaskStreamSpec {
    pub fn num_classes(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_tasks", self.num_tasks),
            ("classes_per_task", self.classes_per_task),
            ("dim", self.dim),
            ("train_per_class", self.train_per_class),
            ("test_per_class", self.test_per_class),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("stream.{name} must be at least 1")));
            }
        }
        if !(self.mean_radius > 0.0 && self.mean_radius.is_finite()) {
            return Err(Error::Config("stream.mean_radius must be positive".into()));
        }
        if !(self.stddev > 0.0 && self.stddev.is_finite()) {
            return Err(Error::Config("stream.stddev must be positive".into()));
        }
        Ok(())
    }
}

/// Up to `b` consecutive training samples from one task segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
    /// Set on the last batch of a task segment.
    pub ends_task: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    train: Vec<Sample>,
    segments: Vec<Range<usize>>,
    tests: Vec<Vec<Sample>>,
    dim: usize,
    num_classes: usize,
    segment: usize,
    cursor: usize,
}

impl TaskStream {
    /// Builds a stream from per-task train and test samples. Train samples
    /// keep the given order.
    pub fn from_tasks(tasks: Vec<(Vec<Sample>, Vec<Sample>)>) -> Result<Self> {
        let mut train = Vec::new();
        let mut segments = Vec::with_capacity(tasks.len());
        let mut tests = Vec::with_capacity(tasks.len());
        let mut dim = None;
        let mut num_classes = 0;
        for (task_train, task_test) in tasks {
            for s in task_train.iter().chain(&task_test) {
                let d = *dim.get_or_insert(s.features.len());
                if s.features.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: s.features.len(),
                    });
                }
                num_classes = num_classes.max(s.label + 1);
            }
            let start = train.len();
            train.extend(task_train);
            segments.push(start..train.len());
            tests.push(task_test);
        }
        Ok(Self {
            train,
            segments,
            tests,
            dim: dim.unwrap_or(0),
            num_classes,
            segment: 0,
            cursor: 0,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.segments.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One more than the largest label present.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn train_samples(&self) -> &[Sample] {
        &self.train
    }

    pub fn test_sets(&self) -> &[Vec<Sample>] {
        &self.tests
    }

    /// Rewinds to the first batch.
    pub fn reset(&mut self) {
        self.segment = 0;
        self.cursor = 0;
    }

    /// Next batch of at most `b` training samples, or `None` once the stream
    /// is exhausted. Batches never span two tasks.
    pub fn next_batch(&mut self, b: usize) -> Option<Batch> {
        let b = b.max(1);
        while self.segment < self.segments.len() {
            let seg = self.segments[self.segment].clone();
            let start = seg.start + self.cursor;
            if start >= seg.end {
                self.segment += 1;
                self.cursor = 0;
                continue;
            }
            let end = (start + b).min(seg.end);
            self.cursor += end - start;
            return Some(Batch {
                samples: self.train[start..end].to_vec(),
                ends_task: end == seg.end,
            });
        }
        None
    }

    /// The same data with the whole training set shuffled across tasks and
    /// cut into as many equal-length segments as there were tasks. Used for
    /// the iid single-pass baseline.
    pub fn into_iid(mut self, rng: &mut RngStream) -> Self {
        rng.shuffle(&mut self.train);
        let t = self.segments.len().max(1);
        let n = self.train.len();
        self.segments = (0..t).map(|i| (i * n / t)..((i + 1) * n / t)).collect();
        self.reset();
        self
    }

    /// Writes the stream in the dataset CSV layout, train rows first.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("task_id,split,label");
        for k in 0..self.dim {
            out.push_str(&format!(",f{k}"));
        }
        out.push('\n');
        let mut row = |s: &Sample, split: &str| {
            out.push_str(&format!("{},{},{}", s.task_id, split, s.label));
            for v in &s.features {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        };
        for s in &self.train {
            row(s, "train");
        }
        for s in self.tests.iter().flatten() {
            row(s, "test");
        }
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Gaussian class clusters split into tasks.
///
/// Class means are drawn uniformly on the sphere of radius `mean_radius`;
/// samples are mean plus isotropic Gaussian noise. Classes are assigned to
/// tasks in label order (`classes_per_task` consecutive labels per task) and
/// training samples are shuffled within each task.
pub fn generate_synthetic_stream(spec: &TaskStreamSpec, rng: &mut RngStream) -> Result<TaskStream> {
    spec.validate()?;
    let means: Vec<Vec<f64>> = (0..spec.num_classes())
        .map(|_| {
            let mut v: Vec<f64> = (0..spec.dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.iter_mut().for_each(|x| *x *= spec.mean_radius / norm);
            v
        })
        .collect();

    let mut next_index = 0u64;
    let mut draw = |rng: &mut RngStream, class: usize, task: usize| -> Sample {
        let features = means[class].iter().map(|m| m + spec.stddev * rng.normal()).collect();
        let s = Sample {
            stream_index: next_index,
            features,
            label: class,
            task_id: task,
        };
        next_index += 1;
        s
    };

    let mut tasks = Vec::with_capacity(spec.num_tasks);
    for task in 0..spec.num_tasks {
        let classes = task * spec.classes_per_task..(task + 1) * spec.classes_per_task;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in classes {
            for _ in 0..spec.train_per_class {
                train.push(draw(rng, class, task));
            }
            for _ in 0..spec.test_per_class {
                test.push(draw(rng, class, task));
            }
        }
        rng.shuffle(&mut train);
        tasks.push((train, test));
    }
    TaskStream::from_tasks(tasks)
}

/// Reads a dataset CSV. Training rows are shuffled within each task with
/// `rng`; stream indices follow file order.
pub fn load_embedding_dataset(path: &Path, rng: &mut RngStream) -> Result<TaskStream> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;

    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let expect = ["task_id", "split", "label"];
    if header.len() < 4 || header.iter().take(3).ne(expect.iter().copied()) {
        return Err(parse_err(
            1,
            "header must start with task_id,split,label followed by feature columns".into(),
        ));
    }
    for (k, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{k}") {
            return Err(parse_err(1, format!("expected feature column f{k}, found {name:?}")));
        }
    }
    let dim = header.len() - 3;

    let mut tasks: BTreeMap<usize, (Vec<Sample>, Vec<Sample>)> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(i as u64 + 2, |p| p.line());
        if record.len() != dim + 3 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", dim + 3, record.len()),
            ));
        }
        let task_id: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("task_id {:?} is not a non-negative integer", &record[0])))?;
        let is_train = match record[1].trim() {
            "train" => true,
            "test" => false,
            other => return Err(parse_err(line, format!("split must be train or test, found {other:?}"))),
        };
        let label: usize = record[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("label {:?} is not a non-negative integer", &record[2])))?;
        let features = record
            .iter()
            .skip(3)
            .enumerate()
            .map(|(k, f)| match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, format!("feature f{k} {f:?} is not a finite number"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let sample = Sample {
            stream_index: i as u64,
            features,
            label,
            task_id,
        };
        let entry = tasks.entry(task_id).or_default();
        if is_train {
            entry.0.push(sample);
        } else {
            entry.1.push(sample);
        }
    }

    let tasks = tasks
        .into_values()
        .map(|(mut train, test)| {
            rng.shuffle(&mut train);
            (train, test)
        })
        .collect();
    TaskStream::from_tasks(tasks)
}
