//! Value types shared by every stage of the engine: class taxonomy, boxes,
//! images, predictions and the run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense fine-grained class id, assigned by taxonomy file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Dense superclass id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuperId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    fine_names: Vec<String>,
    super_names: Vec<String>,
    fine_to_super: Vec<SuperId>,
}

impl ClassTaxonomy {
    /// Builds a taxonomy from `(fine_name, super_id, super_name)` triples in
    /// fine-id order.
    pub fn new(entries: &[(String, u32, String)]) -> Result<Self> {
        let mut super_names: BTreeMap<u32, String> = BTreeMap::new();
        let mut fine_names = Vec::with_capacity(entries.len());
        let mut fine_to_super = Vec::with_capacity(entries.len());
        for (fine_id, (fine_name, super_id, super_name)) in entries.iter().enumerate() {
            match super_names.get(super_id) {
                Some(existing) if existing != super_name => {
                    return Err(Error::Validation(format!(
                        "superclass {super_id} named both `{existing}` and `{super_name}` (fine class {fine_id})"
                    )));
                }
                Some(_) => {}
                None => {
                    super_names.insert(*super_id, super_name.clone());
                }
            }
            fine_names.push(fine_name.clone());
            fine_to_super.push(SuperId(*super_id));
        }
        if fine_names.len() < 2 {
            return Err(Error::Validation(format!(
                "taxonomy needs at least 2 fine classes, found {}",
                fine_names.len()
            )));
        }
        for (expected, id) in super_names.keys().enumerate() {
            if *id as usize != expected {
                return Err(Error::Validation(format!(
                    "superclass ids must be dense from 0: id {expected} is missing"
                )));
            }
        }
        Ok(Self {
            fine_names,
            super_names: super_names.into_values().collect(),
            fine_to_super,
        })
    }

    pub fn parse(text: &str, location: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let at = format!("{location}:{}", lineno + 1);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    at,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            }
            let fine_id: u32 = fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::parse(&at, format!("bad fine id `{}`", fields[0])))?;
            let super_id: u32 = fields[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(&at, format!("bad super id `{}`", fields[2])))?;
            if fine_id as usize != entries.len() {
                return Err(Error::Validation(format!(
                    "{at}: fine ids must be dense and in file order; expected {}, found {fine_id}",
                    entries.len()
                )));
            }
            entries.push((fields[1].to_string(), super_id, fields[3].to_string()));
        }
        Self::new(&entries)
    }

    /// Canonical text form; `parse(to_text())` reproduces the taxonomy and
    /// re-serializes to the same bytes.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (fine, name) in self.fine_names.iter().enumerate() {
            let sup = self.fine_to_super[fine];
            out.push_str(&format!(
                "{fine}\t{name}\t{}\t{}\n",
                sup.0, self.super_names[sup.0 as usize]
            ));
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.fine_names.len()
    }

    pub fn num_superclasses(&self) -> usize {
        self.super_names.len()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        class.index() < self.fine_names.len()
    }

    pub fn check(&self, class: ClassId) -> Result<ClassId> {
        if self.contains(class) {
            Ok(class)
        } else {
            Err(Error::UnknownClass(class.0))
        }
    }

    pub fn superclass_of(&self, class: ClassId) -> Result<SuperId> {
        self.fine_to_super
            .get(class.index())
            .copied()
            .ok_or(Error::UnknownClass(class.0))
    }

    pub fn fine_name(&self, class: ClassId) -> Result<&str> {
        self.fine_names
            .get(class.index())
            .map(String::as_str)
            .ok_or(Error::UnknownClass(class.0))
    }

    pub fn super_name(&self, sup: SuperId) -> Option<&str> {
        self.super_names.get(sup.0 as usize).map(String::as_str)
    }

    /// The segmentation prompt for a predicted fine class.
    pub fn prompt_for(&self, class: ClassId) -> Result<&str> {
        let sup = self.superclass_of(class)?;
        Ok(&self.super_names[sup.0 as usize])
    }
}

pub fn load_taxonomy(path: &Path) -> Result<ClassTaxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ClassTaxonomy::parse(&text, &path.display().to_string())
}

/// Pixel-coordinate box, `x2`/`y2` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl From<[i64; 4]> for BBox {
    fn from(v: [i64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> i64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i64 {
        self.y2 - self.y1
    }

    pub fn validate(&self) -> Result<Self> {
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(self.invalid("degenerate box"));
        }
        Ok(*self)
    }

    pub fn validate_within(&self, width: u32, height: u32) -> Result<Self> {
        self.validate()?;
        if self.x1 < 0 || self.y1 < 0 || self.x2 > width as i64 || self.y2 > height as i64 {
            return Err(self.invalid("box exceeds image bounds"));
        }
        Ok(*self)
    }

    pub fn grow(&self, by: i64) -> Self {
        Self::new(self.x1 - by, self.y1 - by, self.x2 + by, self.y2 + by)
    }

    /// Intersection with `[0, width) x [0, height)`.
    pub fn clamp(&self, width: u32, height: u32) -> Self {
        let (w, h) = (width as i64, height as i64);
        Self::new(
            self.x1.clamp(0, w),
            self.y1.clamp(0, h),
            self.x2.clamp(0, w),
            self.y2.clamp(0, h),
        )
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub(crate) fn invalid(&self, reason: &'static str) -> Error {
        Error::InvalidBox {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
            reason,
        }
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuf {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageBuf {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * Self::CHANNELS;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * Self::CHANNELS)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * Self::CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * Self::CHANNELS;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_id: ClassId,
    pub score: f64,
}

impl Prediction {
    pub fn new(class_id: ClassId, score: f64) -> Self {
        Self { class_id, score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReducerKind {
    /// Principal-component projection fitted on the training table.
    #[default]
    Pca,
    /// Pass-through, for feature tensors that arrive already reduced.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToTConfig {
    pub delta: u32,
    pub blur_sigma: f64,
    pub resize_target: (u32, u32),
    pub k: usize,
    pub reducer: ReducerKind,
    pub reducer_dim: usize,
    /// Standardize each column separately instead of with one global scale.
    pub per_column_standardize: bool,
    pub top_n: usize,
    pub seed: u64,
    pub train_per_class: usize,
}

impl Default for ToTConfig {
    fn default() -> Self {
        Self {
            delta: 5,
            blur_sigma: 1.5,
            resize_target: (224, 224),
            k: 1000,
            reducer: ReducerKind::Pca,
            reducer_dim: 32,
            per_column_standardize: false,
            top_n: 2,
            seed: 0,
            train_per_class: 200,
        }
    }
}

impl ToTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if self.top_n < 1 {
            return bad("top_n must be at least 1");
        }
        if self.reducer_dim < 1 {
            return bad("reducer_dim must be at least 1");
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
        if !(self.blur_sigma >= 0.0) || !self.blur_sigma.is_finite() {
            return bad("blur_sigma must be a finite nonnegative number");
        }
        if self.resize_target.0 < 1 || self.resize_target.1 < 1 {
            return bad("resize_target must be at least 1x1");
        }
        if self.train_per_class < 1 {
            return bad("train_per_class must be at least 1");
        }
        Ok(())
    }
}

/// Canonical σ key used by precomputed predictions and mock scenarios:
/// integral values keep one decimal (`2.0`), others use the shortest form.
pub fn sigma_key(sigma: f64) -> String {
    if sigma.fract() == 0.0 && sigma.abs() < 1e15 {
        format!("{sigma:.1}")
    } else {
        format!("{sigma}")
    }
}
