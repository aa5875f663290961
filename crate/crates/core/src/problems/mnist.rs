use std::path::Path;

use rayon::prelude::*;

use super::idx::{read_idx_images, read_idx_labels, IdxImages};
use super::{shard, Dataset, Objective, ProblemConstants, Sample};
use crate::error::{invalid, Error, Result};
use crate::geometry::ConvexDomain;

const CLASSES: usize = 10;

/// Inputs per example for 28x28 MNIST: 784 pixels plus a constant bias feature.
pub const MNIST_FEATURES: usize = 785;

/// Diameter of the origin-centered feasible ball.
pub const MNIST_BALL_DIAMETER: f64 = 0.1;

/// Images with matching labels.
#[derive(Debug, Clone)]
pub struct MnistData {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl MnistData {
    pub fn new(images: IdxImages, labels: Vec<u8>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(invalid(
                "labels",
                format!("{} images but {} labels", images.count, labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(invalid("labels", format!("label {bad} outside 0..{CLASSES}")));
        }
        Ok(Self { images, labels })
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        let imgs = read_idx_images(images.as_ref())?;
        let labs = read_idx_labels(labels.as_ref())?;
        if imgs.count != labs.len() {
            return Err(Error::Idx {
                path: labels.as_ref().to_path_buf(),
                offset: 4,
                reason: format!(
                    "label count {} does not match image count {} in {}",
                    labs.len(),
                    imgs.count,
                    images.as_ref().display()
                ),
            });
        }
        Self::new(imgs, labs)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn features(&self) -> usize {
        self.images.rows * self.images.cols + 1
    }
}

/// Ten-class softmax regression on MNIST, parameters stored row-major as
/// `10 x (pixels + 1)`.
///
/// Uses the fixed constants `G = sqrt(2 * 785)`, `L = 785 / 2` and a ball of
/// diameter 0.1. Population quantities are evaluated on the held-out set.
#[derive(Debug, Clone)]
pub struct MnistProblem {
    train: MnistData,
    test: MnistData,
    features: usize,
    domain: ConvexDomain,
    constants: ProblemConstants,
}

impl MnistProblem {
    pub fn load(
        train_images: impl AsRef<Path>,
        train_labels: impl AsRef<Path>,
        test_images: impl AsRef<Path>,
        test_labels: impl AsRef<Path>,
    ) -> Result<Self> {
        let train = MnistData::load(train_images, train_labels)?;
        let test = MnistData::load(test_images, test_labels)?;
        Self::from_data(train, test)
    }

    /// Loads the four standard file names from one directory.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let d = dir.as_ref();
        Self::load(
            d.join("train-images-idx3-ubyte"),
            d.join("train-labels-idx1-ubyte"),
            d.join("t10k-images-idx3-ubyte"),
            d.join("t10k-labels-idx1-ubyte"),
        )
    }

    pub fn from_data(train: MnistData, test: MnistData) -> Result<Self> {
        if train.features() != test.features() {
            return Err(invalid("test", "train and test images differ in shape"));
        }
        if train.is_empty() || test.is_empty() {
            return Err(invalid("train", "train and test sets must be non-empty"));
        }
        let features = train.features();
        let dim = CLASSES * features;
        let domain = ConvexDomain::origin_ball(dim, MNIST_BALL_DIAMETER / 2.0)?;
        let f = MNIST_FEATURES as f64;
        let g = (2.0 * f).sqrt();
        let l = f / 2.0;
        let constants = ProblemConstants::new(g, l, g, l, domain.diameter())?;
        Ok(Self {
            train,
            test,
            features,
            domain,
            constants,
        })
    }

    pub fn train(&self) -> &MnistData {
        &self.train
    }

    pub fn test(&self) -> &MnistData {
        &self.test
    }

    fn input(&self, data: &MnistData, k: usize, out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(data.images.image(k)) {
            *o = p as f64 / 255.0;
        }
        out[self.features - 1] = 1.0;
    }

    fn probabilities(&self, x: &[f64], a: &[f64]) -> [f64; CLASSES] {
        let mut logits = [0.0; CLASSES];
        for (c, l) in logits.iter_mut().enumerate() {
            let row = &x[c * self.features..(c + 1) * self.features];
            *l = row.iter().zip(a).map(|(w, v)| w * v).sum();
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - top).exp();
            total += *l;
        }
        for l in logits.iter_mut() {
            *l /= total;
        }
        logits
    }

    fn example_loss(&self, data: &MnistData, x: &[f64], k: usize, buf: &mut [f64]) -> (f64, bool) {
        self.input(data, k, buf);
        let p = self.probabilities(x, buf);
        let y = data.labels[k] as usize;
        let argmax = p
            .iter()
            .enumerate()
            .fold(0, |best, (c, v)| if *v > p[best] { c } else { best });
        (-p[y].max(f64::MIN_POSITIVE).ln(), argmax == y)
    }

    /// Mean cross-entropy and accuracy on the held-out set.
    pub fn evaluate(&self, x: &[f64]) -> (f64, f64) {
        let chunk = 500;
        let parts: Vec<(f64, usize)> = (0..self.test.len())
            .collect::<Vec<_>>()
            .par_chunks(chunk)
            .map(|ks| {
                let mut buf = vec![0.0; self.features];
                ks.iter().fold((0.0, 0usize), |(l, h), &k| {
                    let (loss, hit) = self.example_loss(&self.test, x, k, &mut buf);
                    (l + loss, h + usize::from(hit))
                })
            })
            .collect();
        let (loss, hits) = parts.iter().fold((0.0, 0), |(l, h), (pl, ph)| (l + pl, h + ph));
        let n = self.test.len() as f64;
        (loss / n, hits as f64 / n)
    }
}

impl Objective for MnistProblem {
    type Payload = usize;

    fn name(&self) -> &'static str {
        "mnist"
    }

    fn dim(&self) -> usize {
        CLASSES * self.features
    }

    fn domain(&self) -> &ConvexDomain {
        &self.domain
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn loss(&self, x: &[f64], z: &Sample<usize>) -> f64 {
        let mut buf = vec![0.0; self.features];
        self.example_loss(&self.train, x, z.payload, &mut buf).0
    }

    fn grad_into(&self, x: &[f64], z: &Sample<usize>, out: &mut [f64]) {
        let mut a = vec![0.0; self.features];
        self.input(&self.train, z.payload, &mut a);
        let mut p = self.probabilities(x, &a);
        p[self.train.labels[z.payload] as usize] -= 1.0;
        for (c, pc) in p.iter().enumerate() {
            let row = &mut out[c * self.features..(c + 1) * self.features];
            for (o, v) in row.iter_mut().zip(&a) {
                *o = pc * v;
            }
        }
    }

    fn population_loss(&self, x: &[f64]) -> f64 {
        self.evaluate(x).0
    }

    fn cheap_population_loss(&self) -> bool {
        false
    }

    fn accuracy(&self, x: &[f64]) -> Option<f64> {
        Some(self.evaluate(x).1)
    }

    fn datasets(&self, machines: usize, horizon: usize, seed: u64) -> Result<Vec<Dataset<usize>>> {
        let all: Vec<usize> = (0..self.train.len()).collect();
        shard(&all, machines, horizon, seed)
    }
}
