//! Datasets, file formats, checkpoints and configuration.

pub mod checkpoint;
pub mod cifar;
pub mod config;
pub mod ppm;
pub mod synth;

use std::fmt;

use mocse_corrupt::Image;
use ndgrad::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Labelled images of one geometry, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    split: Split,
    id: String,
}

impl Dataset {
    pub fn new(
        images: Vec<Image>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        split: Split,
        id: impl Into<String>,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if class_names.is_empty() {
            return Err(invalid("dataset needs at least one class"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(invalid(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        if let Some(first) = images.first() {
            if let Some(i) = images.iter().position(|im| im.shape() != first.shape()) {
                return Err(invalid(format!(
                    "image {i} is {:?}, expected {:?}",
                    images[i].shape(),
                    first.shape()
                )));
            }
        }
        if let Some(i) = images
            .iter()
            .position(|im| im.data().iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(invalid(format!("image {i} has values outside [0, 1]")));
        }
        Ok(Self {
            images,
            labels,
            class_names,
            split,
            id: id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Height, width, channels (zeros for an empty dataset).
    pub fn image_shape(&self) -> [usize; 3] {
        self.images.first().map_or([0; 3], Image::shape)
    }

    /// Count of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// `[B, H, W, C]` tensor of the selected images and their labels.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        Ok((
            stack(indices.iter().map(|&i| &self.images[i]))?,
            indices.iter().map(|&i| self.labels[i]).collect(),
        ))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.images[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_names.clone(),
            self.split,
            format!("{}[subset:{}]", self.id, indices.len()),
        )
    }

    /// Same labels, images replaced.
    pub fn with_images(&self, images: Vec<Image>, id: impl Into<String>) -> Result<Dataset> {
        Dataset::new(
            images,
            self.labels.clone(),
            self.class_names.clone(),
            self.split,
            id,
        )
    }
}

/// Stacks equally shaped images into a `[B, H, W, C]` tensor.
pub fn stack<'a, T: Real>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut shape: Option<[usize; 3]> = None;
    let mut count = 0;
    for im in images {
        match shape {
            None => shape = Some(im.shape()),
            Some(s) if s != im.shape() => {
                return Err(invalid("cannot stack images of different shapes"))
            }
            _ => {}
        }
        data.extend(im.data().iter().map(|&v| T::of(f64::from(v))));
        count += 1;
    }
    let [h, w, c] = shape.ok_or_else(|| invalid("cannot stack zero images"))?;
    Ok(Tensor::new(&[count, h, w, c], data)?)
}

/// Splits a `[B, H, W, C]` tensor back into images.
pub fn unstack<T: Real>(t: &Tensor<T>) -> Result<Vec<Image>> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(invalid(format!("expected [B, H, W, C], got {s:?}")));
    }
    let per = s[1] * s[2] * s[3];
    t.data()
        .chunks(per)
        .map(|c| {
            Ok(Image::new(
                s[1],
                s[2],
                s[3],
                c.iter().map(|v| v.as_f64() as f32).collect(),
            )?)
        })
        .collect()
}
