use alloc::vec::Vec;

use crate::{Error, Result, Shape, Tensor};

/// Labelled images sharing one shape, pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.len() != labels.len() {
            return Err(Error::Config(alloc::format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let shape = images[0].shape().clone();
        for image in &images {
            image.expect_shape(&shape)?;
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel { label, num_classes });
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> &Shape {
        self.images[0].shape()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> Option<(&Tensor, usize)> {
        Some((self.images.get(index)?, self.labels[index]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let images = indices.iter().map(|&i| self.images[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(images, labels, self.num_classes)
    }
}
