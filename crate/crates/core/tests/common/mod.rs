//! Synthetic data shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tot::backends::mock::{CropScript, MockScenario, RecordScript};
use tot::backends::{write_feature_tensor, Manifest, ManifestRecord, Precomputed, Ranked, Split};
use tot::domain::SuperId;
use tot::symbolizer::FeatureMap;
use tot::{BBox, ClassId, ClassTaxonomy};

/// `supers` superclasses with `per_super` fine classes each, ids in order.
pub fn taxonomy_text(supers: usize, per_super: usize) -> String {
    let mut out = String::new();
    for s in 0..supers {
        for f in 0..per_super {
            let id = s * per_super + f;
            out.push_str(&format!("{id}\tfine{id}\t{s}\tsuper{s}\n"));
        }
    }
    out
}

pub fn taxonomy(supers: usize, per_super: usize) -> ClassTaxonomy {
    ClassTaxonomy::parse(&taxonomy_text(supers, per_super), "synthetic").unwrap()
}

/// Well-separated Gaussian clusters in channel space: every spatial
/// position of a class-`c` feature map is drawn around `means[c]`.
pub struct Blobs {
    pub means: Vec<Vec<f64>>,
    pub noise: f64,
    pub height: usize,
    pub width: usize,
}

impl Blobs {
    pub fn new(classes: usize, channels: usize, spread: f64, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spread).unwrap();
        let means = (0..classes)
            .map(|_| (0..channels).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        Self {
            means,
            noise,
            height: 6,
            width: 6,
        }
    }

    pub fn sample(&self, class: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        let normal = Normal::new(0.0, self.noise).unwrap();
        let mean = &self.means[class];
        let mut values = Vec::with_capacity(mean.len() * self.height * self.width);
        for &m in mean {
            for _ in 0..self.height * self.width {
                values.push((m + normal.sample(rng)) as f32);
            }
        }
        FeatureMap::new(mean.len(), self.height, self.width, values).unwrap()
    }

    /// `per_class` samples of every class, grouped by class.
    pub fn dataset(&self, per_class: usize, seed: u64) -> Vec<(FeatureMap, ClassId)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for c in 0..self.means.len() {
            for _ in 0..per_class {
                out.push((self.sample(c, &mut rng), ClassId(c as u32)));
            }
        }
        out
    }
}

pub const SWEEP_SIGMAS: [f64; 6] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];

fn ranked(c: u32) -> Ranked {
    Ranked::Classes(vec![ClassId(c)])
}

/// Writes a taxonomy, TOTF tensors and a manifest with train and test
/// records. Test records carry precomputed predictions for every σ in
/// [`SWEEP_SIGMAS`]: every third test record is "attacked" (original
/// prediction wrong, blurred crops recover the label from σ = 1 on).
pub struct SyntheticSet {
    pub dir: PathBuf,
    pub taxonomy: PathBuf,
    pub manifest: PathBuf,
}

pub fn write_synthetic_set(dir: &Path, train_per_class: usize, test_per_class: usize, seed: u64) -> SyntheticSet {
    let (supers, per_super) = (3, 2);
    let classes = supers * per_super;
    std::fs::write(dir.join("taxonomy.tsv"), taxonomy_text(supers, per_super)).unwrap();
    std::fs::create_dir_all(dir.join("features")).unwrap();
    let blobs = Blobs::new(classes, 8, 4.0, 0.4, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut records = Vec::new();
    for (split, per_class) in [(Split::Train, train_per_class), (Split::Test, test_per_class)] {
        for c in 0..classes {
            for i in 0..per_class {
                let tag = match split {
                    Split::Train => "train",
                    Split::Test => "test",
                };
                let id = format!("{tag}-{c}-{i}");
                let rel = format!("features/{id}.totf");
                write_feature_tensor(&blobs.sample(c, &mut rng), &dir.join(&rel)).unwrap();
                let label = c as u32;
                let preds = (split == Split::Test).then(|| {
                    let attacked = i % 3 == 0;
                    let wrong = (label + 1) % classes as u32;
                    let orig = if attacked { wrong } else { label };
                    let mut second_blur = BTreeMap::new();
                    for s in SWEEP_SIGMAS {
                        let top = if attacked && s < 1.0 { wrong } else { label };
                        second_blur.insert(tot::domain::sigma_key(s), vec![ranked(top); 3]);
                    }
                    Precomputed {
                        orig: Some(ranked(orig)),
                        second_blur,
                        second_noblur: Some(vec![ranked(orig); 3]),
                    }
                });
                records.push(ManifestRecord {
                    id,
                    split,
                    label_fine: ClassId(label),
                    label_super: SuperId(label / per_super as u32),
                    image_path: None,
                    feature_path: Some(rel),
                    rois: if split == Split::Test {
                        vec![BBox::new(0, 0, 8, 8)]
                    } else {
                        vec![]
                    },
                    preds,
                    adversarial: false,
                    attack: None,
                    base_dir: dir.to_path_buf(),
                });
            }
        }
    }
    // Shuffle so the manifest is not grouped by class.
    for i in (1..records.len()).rev() {
        let j = rng.gen_range(0..=i);
        records.swap(i, j);
    }
    let manifest = Manifest { meta: None, records };
    std::fs::write(dir.join("manifest.jsonl"), manifest.to_jsonl()).unwrap();
    SyntheticSet {
        dir: dir.to_path_buf(),
        taxonomy: dir.join("taxonomy.tsv"),
        manifest: dir.join("manifest.jsonl"),
    }
}

/// Mock script for one record: original, blurred and unblurred crop
/// answers (one ROI, identical across boxes) and the third predictions.
pub fn script(orig: u32, blur: BTreeMap<String, u32>, noblur: u32, third: &[u32]) -> RecordScript {
    RecordScript {
        orig: Some(ranked(orig)),
        rois: Some(vec![BBox::new(0, 0, 16, 16)]),
        blur: Some(blur.into_iter().map(|(k, c)| (k, CropScript::All(ranked(c)))).collect()),
        noblur: Some(CropScript::All(ranked(noblur))),
        third: Some(third.iter().map(|&c| ClassId(c)).collect()),
        ..RecordScript::default()
    }
}

/// Image-free test records that only name an id and labels.
pub fn bare_record(id: &str, label: u32, per_super: u32, adversarial: bool) -> ManifestRecord {
    ManifestRecord {
        id: id.to_string(),
        split: Split::Test,
        label_fine: ClassId(label),
        label_super: SuperId(label / per_super),
        image_path: Some("unused.png".into()),
        feature_path: None,
        rois: vec![],
        preds: None,
        adversarial,
        attack: adversarial.then(|| "scripted".to_string()),
        base_dir: PathBuf::from("."),
    }
}

pub fn write_mock(dir: &Path, scenario: &MockScenario, records: &[ManifestRecord]) -> (PathBuf, PathBuf) {
    let scenario_path = dir.join("scenario.json");
    std::fs::write(&scenario_path, serde_json::to_string(scenario).unwrap()).unwrap();
    let manifest_path = dir.join("mock_manifest.jsonl");
    let manifest = Manifest {
        meta: None,
        records: records.to_vec(),
    };
    std::fs::write(&manifest_path, manifest.to_jsonl()).unwrap();
    (scenario_path, manifest_path)
}

pub fn tot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tot"))
        .args(args)
        .env("TOT_LOG", "warn")
        .output()
        .expect("tot binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
