//! Frame images: 8-bit RGB buffers, PNG files and `synthetic:` URIs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::data::manifest::DatasetManifest;
use crate::data::synth::{render_frame, RenderSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SYNTHETIC_SCHEME: &str = "synthetic:";

/// Square RGB image, row-major HWC bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    side: usize,
    data: Vec<u8>,
}

impl FrameImage {
    pub fn new(side: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != side * side * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes for a {side}x{side}x3 image",
                data.len()
            )));
        }
        Ok(Self { side, data })
    }

    /// Quantizes a [0, 1] HWC float image.
    pub fn from_unit_array(img: &Array3<f32>) -> Result<Self> {
        let (h, w, c) = img.dim();
        if h != w || c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected square HxWx3, got {h}x{w}x{c}"
            )));
        }
        let data = img
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::new(h, data)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    /// HWC array with values in [0, 1].
    pub fn to_array<T: Scalar>(&self) -> Array3<T> {
        let scale = T::c(1.0 / 255.0);
        Array3::from_shape_fn((self.side, self.side, 3), |(y, x, c)| {
            T::c(self.data[(y * self.side + x) * 3 + c] as f64) * scale
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.side as u32, self.side as u32, self.data.clone())
            .expect("buffer length checked on construction");
        buf.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        if img.width() != img.height() {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("image is {}x{}, expected square", img.width(), img.height()),
            });
        }
        Self::new(img.width() as usize, img.into_raw())
    }
}

/// Images for a manifest, keyed by frame_id.
#[derive(Debug, Clone, Default)]
pub struct ImageStore {
    images: BTreeMap<String, FrameImage>,
}

impl ImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame_id: impl Into<String>, image: FrameImage) {
        self.images.insert(frame_id.into(), image);
    }

    pub fn get(&self, frame_id: &str) -> Result<&FrameImage> {
        self.images.get(frame_id).ok_or_else(|| Error::Image {
            path: PathBuf::from(frame_id),
            message: "no image loaded for frame".into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Loads the images of a manifest stored at `manifest_path`, honoring the
    /// provenance image root.
    pub fn load_for(manifest: &DatasetManifest, manifest_path: &Path) -> Result<Self> {
        Self::load(manifest, &image_base(manifest, manifest_path))
    }

    /// Resolves every record's `image_ref`: file paths are relative to `base_dir`,
    /// `synthetic:` URIs are rendered from the record's AU intensities.
    pub fn load(manifest: &DatasetManifest, base_dir: &Path) -> Result<Self> {
        let mut store = Self::new();
        for r in manifest.records() {
            let img = if let Some(spec) = r.image_ref.strip_prefix(SYNTHETIC_SCHEME) {
                let (render, seed) = RenderSpec::parse_uri(spec)?;
                let arr = render_frame(&render, seed, &r.frame_id, &r.au)?;
                FrameImage::from_unit_array(&arr)?
            } else {
                FrameImage::load_png(&base_dir.join(&r.image_ref))?
            };
            store.insert(r.frame_id.clone(), img);
        }
        Ok(store)
    }
}

/// Directory relative image paths of a stored manifest resolve against.
pub fn image_base(manifest: &DatasetManifest, manifest_path: &Path) -> PathBuf {
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    match &manifest.provenance.image_root {
        Some(root) => dir.join(root),
        None => dir,
    }
}
