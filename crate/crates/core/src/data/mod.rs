//! Training pairs, patch sampling, augmentation and batching.

pub mod augment;
pub mod io;
pub mod patch;

pub use augment::{apply_augment, augment, AugmentParams};
pub use io::{
    list_pngs, load_dir, load_png, read_dataset, read_manifest, save_mask_png, save_png, write_dataset, write_manifest, write_pair,
    ManifestRow,
};
pub use patch::{derive_seed, extract_patches, Batcher, BatcherConfig, PatchBatch};

use crate::degrade::ArtifactMask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::Tensor;

/// Clean image, its corrupted counterpart and the defect coverage mask.
///
/// Images are `(1, 3, h, w)` in `[0, 1]`; the mask is `(1, 1, h, w)`.
/// Wherever the mask is zero the two images agree exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair<T> {
    pub clean: Tensor<T>,
    pub corrupted: Tensor<T>,
    pub mask: ArtifactMask<T>,
    pub id: String,
}

impl<T: Scalar> ImagePair<T> {
    pub fn new(
        clean: Tensor<T>,
        corrupted: Tensor<T>,
        mask: ArtifactMask<T>,
        id: impl Into<String>,
    ) -> Result<Self> {
        let pair = ImagePair {
            clean,
            corrupted,
            mask,
            id: id.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn height(&self) -> usize {
        self.clean.shape().h
    }

    pub fn width(&self) -> usize {
        self.clean.shape().w
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.clean.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::shape(format!("{}: clean image must be 1x3xHxW, got {s}", self.id)));
        }
        if self.corrupted.shape() != s {
            return Err(Error::shape(format!(
                "{}: corrupted {} does not match clean {s}",
                self.id,
                self.corrupted.shape()
            )));
        }
        let ms = self.mask.alpha.shape();
        if (ms.n, ms.c, ms.h, ms.w) != (1, 1, s.h, s.w) {
            return Err(Error::shape(format!("{}: mask {ms} does not match {s}", self.id)));
        }
        let plane = s.plane();
        let alpha = self.mask.alpha.data();
        for (i, (&a, &b)) in self.clean.data().iter().zip(self.corrupted.data()).enumerate() {
            if a != b && alpha[i % plane] == T::zero() {
                return Err(Error::Dataset(format!(
                    "{}: clean and corrupted differ at unmasked pixel {}",
                    self.id,
                    i % plane
                )));
            }
        }
        Ok(())
    }
}
