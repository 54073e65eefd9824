//! In-memory image datasets: construction, synthetic blobs, seeded splits,
//! batching and patch extraction.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Grayscale images of shape `(Z, H, W)` with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    images: Tensor<f32>,
    labels: Option<Vec<usize>>,
    /// For patch datasets: index of the image each patch was cut from.
    sources: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor<f32>, labels: Option<Vec<usize>>) -> Result<Self> {
        if images.shape().len() != 3 {
            return Err(Error::shape(alloc::format!(
                "images must be (count, height, width), got {:?}",
                images.shape()
            )));
        }
        if let Some(bad) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(alloc::format!("pixel value {bad} outside [0, 1]")));
        }
        if let Some(labels) = &labels {
            if labels.len() != images.rows() {
                return Err(Error::shape(alloc::format!(
                    "{} labels for {} images",
                    labels.len(),
                    images.rows()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            sources: None,
        })
    }

    /// Rescales 8-bit pixels by `1/255`.
    pub fn from_bytes(
        name: impl Into<String>,
        count: usize,
        height: usize,
        width: usize,
        pixels: &[u8],
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Self::new(name, Tensor::new(vec![count, height, width], data)?, labels)
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height() * self.width()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn sources(&self) -> Option<&[usize]> {
        self.sources.as_deref()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |m| m + 1)
    }

    /// Every image as one flattened row: `(Z, H*W)`.
    pub fn rows(&self) -> Tensor<f32> {
        self.images.clone().flatten_rows()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            name: self.name.clone(),
            images: self.images.select_rows(indices)?,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            sources: self.sources.as_ref().map(|s| indices.iter().map(|&i| s[i]).collect()),
        })
    }

    /// Keeps the samples whose label satisfies `keep`.
    pub fn filter_labels(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let labels = self.labels.as_ref().ok_or(Error::Empty("labels"))?;
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(labels[i])).collect();
        self.subset(&idx)
    }

    /// Seeded minibatches of flattened rows, reshuffled per call.
    pub fn batches(&self, batch_size: usize, seed: u64) -> Result<impl Iterator<Item = Tensor<f32>> + '_> {
        let order = batch_indices(self.len(), batch_size, &mut rng::seeded(seed))?;
        Ok(order
            .into_iter()
            .map(move |idx| self.images.select_rows(&idx).unwrap().flatten_rows()))
    }
}

/// Shuffled index chunks of size `batch_size`; the last chunk may be short.
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Gaussian clusters with centers drawn uniformly from `[0.1, 0.9]^dim` and
/// per-coordinate noise `0.1 / separation`, clipped to `[0, 1]`. Images are
/// `1 x dim`.
pub fn synth_blobs(n_classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(Error::invalid("separation must be positive"));
    }
    if n_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::invalid(
            "class count, samples per class and dimension must be positive",
        ));
    }
    let mut rng = rng::seeded(seed);
    let noise = Normal::new(0.0, 0.1 / separation).unwrap();
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(0.1..0.9)).collect())
        .collect();
    let mut data = Vec::with_capacity(n_classes * per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(
                center
                    .iter()
                    .map(|&c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32),
            );
            labels.push(class);
        }
    }
    Dataset::new(
        alloc::format!("blobs-{n_classes}x{per_class}x{dim}"),
        Tensor::new(vec![n_classes * per_class, 1, dim], data)?,
        Some(labels),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub test: usize,
    pub substitute: usize,
    pub seed: u64,
}

/// Disjoint index sets produced by [`split`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub substitute: Vec<usize>,
}

impl Split {
    pub fn datasets(&self, ds: &Dataset) -> Result<(Dataset, Dataset, Option<Dataset>)> {
        let part = |idx: &[usize]| {
            if idx.is_empty() {
                Ok(None)
            } else {
                ds.subset(idx).map(Some)
            }
        };
        let train = part(&self.train)?.ok_or(Error::Empty("train split"))?;
        let test = part(&self.test)?.ok_or(Error::Empty("test split"))?;
        Ok((train, test, part(&self.substitute)?))
    }
}

/// Seeded disjoint split. With labels the draw is stratified: each class is
/// shuffled and spread evenly along one ordering, which is then cut into
/// consecutive train, test and substitute runs, so every run keeps roughly
/// the class proportions of the whole set.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let total = spec.train + spec.test + spec.substitute;
    if total > ds.len() {
        return Err(Error::invalid(alloc::format!(
            "split needs {total} samples but the dataset has {}",
            ds.len()
        )));
    }
    let mut rng = rng::seeded(spec.seed);
    let order: Vec<usize> = match ds.labels() {
        None => {
            let mut all: Vec<usize> = (0..ds.len()).collect();
            all.shuffle(&mut rng);
            all
        }
        Some(labels) => {
            let mut by_class = vec![Vec::new(); ds.n_classes()];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l].push(i);
            }
            let mut keyed = Vec::with_capacity(ds.len());
            for (class, members) in by_class.iter_mut().enumerate() {
                members.shuffle(&mut rng);
                let offset: f64 = rng.random();
                let size = members.len() as f64;
                for (rank, &i) in members.iter().enumerate() {
                    keyed.push(((rank as f64 + offset) / size, class, i));
                }
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|(_, _, i)| i).collect()
        }
    };
    let (train, rest) = order.split_at(spec.train);
    let (test, rest) = rest.split_at(spec.test);
    Ok(Split {
        train: train.to_vec(),
        test: test.to_vec(),
        substitute: rest[..spec.substitute].to_vec(),
    })
}

/// Sliding-window patches of every image. The result records the source
/// image of each patch and inherits its label.
pub fn extract_patches(ds: &Dataset, patch_h: usize, patch_w: usize, stride: usize) -> Result<Dataset> {
    if stride == 0 || patch_h == 0 || patch_w == 0 {
        return Err(Error::invalid("patch size and stride must be positive"));
    }
    if patch_h > ds.height() || patch_w > ds.width() {
        return Err(Error::invalid(alloc::format!(
            "patch {patch_h}x{patch_w} larger than image {}x{}",
            ds.height(),
            ds.width()
        )));
    }
    let ys: Vec<usize> = (0..=ds.height() - patch_h).step_by(stride).collect();
    let xs: Vec<usize> = (0..=ds.width() - patch_w).step_by(stride).collect();
    let per_image = ys.len() * xs.len();
    let mut data = Vec::with_capacity(ds.len() * per_image * patch_h * patch_w);
    let mut sources = Vec::with_capacity(ds.len() * per_image);
    let w = ds.width();
    for i in 0..ds.len() {
        let img = ds.images.row(i);
        for &y in &ys {
            for &x in &xs {
                for r in y..y + patch_h {
                    data.extend_from_slice(&img[r * w + x..r * w + x + patch_w]);
                }
                sources.push(i);
            }
        }
    }
    let labels = ds.labels().map(|l| sources.iter().map(|&s| l[s]).collect());
    let mut out = Dataset::new(
        alloc::format!("{}-patches{patch_h}x{patch_w}s{stride}", ds.name),
        Tensor::new(vec![sources.len(), patch_h, patch_w], data)?,
        labels,
    )?;
    out.sources = Some(sources);
    Ok(out)
}
