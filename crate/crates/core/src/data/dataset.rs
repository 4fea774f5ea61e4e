use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::render::{render, ClassKind};
use super::spec::{background_class, validate_classes, DatasetSpec};
use crate::error::{HydraError, Result};
use crate::image::{Centroid, Image, PATCH_SIZE};

pub const MANIFEST: &str = "manifest.json";
pub const IMAGE_DIR: &str = "images";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub path: String,
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub split: Split,
}

impl Record {
    pub fn centroid(&self) -> Centroid {
        Centroid::new(self.cx, self.cy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(HydraError::parse(
                "version",
                format!("expected {MANIFEST_VERSION}, got {}", self.version),
            ));
        }
        validate_classes(&self.classes).map_err(|m| HydraError::parse("classes", m))?;
        let mut ids = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let field = |f: &str| format!("records[{i}].{f}");
            if r.id.is_empty() || !ids.insert(r.id.as_str()) {
                return Err(HydraError::parse(field("id"), format!("empty or duplicate id `{}`", r.id)));
            }
            if r.class_id >= self.classes.len() {
                return Err(HydraError::parse(
                    field("class_id"),
                    format!("{} not below class count {}", r.class_id, self.classes.len()),
                ));
            }
            for (name, v) in [("cx", r.cx), ("cy", r.cy)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(HydraError::parse(field(name), format!("{v} outside [0, 1]")));
                }
            }
            if r.path.is_empty() || Path::new(&r.path).is_absolute() || r.path.contains("..") {
                return Err(HydraError::parse(field("path"), format!("`{}` is not a relative path inside the dataset", r.path)));
            }
        }
        Ok(())
    }
}

/// A patch with its annotations.
#[derive(Clone, Copy, Debug)]
pub struct LabelledPatch<'a> {
    pub id: &'a str,
    pub image: &'a Image,
    pub class_id: usize,
    pub centroid: Centroid,
}

/// A training patch whose annotations have been withheld. There is
/// deliberately nothing to read besides the pixels:
///
/// ```compile_fail
/// fn peek(u: hydramix::data::UnlabelledPatch<'_>) -> usize {
///     u.class_id
/// }
/// ```
#[derive(Clone, Copy, Debug)]
pub struct UnlabelledPatch<'a> {
    pub id: &'a str,
    pub image: &'a Image,
}

/// A loaded or freshly rendered dataset; `images[i]` belongs to `records[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub records: Vec<Record>,
    pub images: Vec<Image>,
}

/// What `generate` reports back.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerateSummary {
    /// `counts[split][class name]`.
    pub counts: BTreeMap<Split, BTreeMap<String, usize>>,
    /// SHA-256 over the manifest and every PNG, in record order.
    pub checksum: String,
}

impl Dataset {
    /// Renders every record in memory. Record `i` of the combined
    /// train-then-test list draws from its own RNG stream, so the result
    /// does not depend on evaluation order.
    pub fn render(spec: &DatasetSpec) -> Result<Dataset> {
        spec.validate()?;
        let kinds = ClassKind::for_classes(&spec.classes);
        let c = spec.num_classes();
        let total = spec.n_train + spec.n_test;
        let mut records = Vec::with_capacity(total);
        let mut images = Vec::with_capacity(total);
        for i in 0..total {
            let (split, local) = if i < spec.n_train {
                (Split::Train, i)
            } else {
                (Split::Test, i - spec.n_train)
            };
            let class_id = local % c;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let out = render(kinds[class_id], &mut rng);
            let id = format!("{}-{local:06}", split_name(split));
            records.push(Record {
                path: format!("{IMAGE_DIR}/{id}.png"),
                id,
                class_id,
                cx: out.centroid.x,
                cy: out.centroid.y,
                split,
            });
            images.push(Image::from_rgb8(PATCH_SIZE, &out.rgb)?);
        }
        Ok(Dataset {
            classes: spec.classes.clone(),
            records,
            images,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn background_class(&self) -> Option<usize> {
        background_class(&self.classes)
    }

    pub fn indices(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        self.records
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.split == split)
            .map(|(i, _)| i)
    }

    pub fn labelled(&self, index: usize) -> LabelledPatch<'_> {
        let r = &self.records[index];
        LabelledPatch {
            id: &r.id,
            image: &self.images[index],
            class_id: r.class_id,
            centroid: r.centroid(),
        }
    }

    pub fn unlabelled(&self, index: usize) -> UnlabelledPatch<'_> {
        UnlabelledPatch {
            id: &self.records[index].id,
            image: &self.images[index],
        }
    }

    pub fn test_set(&self) -> Vec<LabelledPatch<'_>> {
        self.indices(Split::Test).map(|i| self.labelled(i)).collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            classes: self.classes.clone(),
            records: self.records.clone(),
        }
    }

    /// Writes `manifest.json` and `images/<id>.png` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<GenerateSummary> {
        let img_dir = dir.join(IMAGE_DIR);
        fs::create_dir_all(&img_dir).map_err(|e| HydraError::io(&img_dir, e))?;
        let manifest = serde_json::to_vec_pretty(&self.manifest())
            .map_err(|e| HydraError::parse("manifest", e.to_string()))?;
        let mut hash = Sha256::new();
        hash.update(&manifest);
        for (r, img) in self.records.iter().zip(&self.images) {
            let path = dir.join(&r.path);
            let png = encode_png(img).map_err(|e| HydraError::io(&path, e))?;
            hash.update(&png);
            fs::write(&path, png).map_err(|e| HydraError::io(&path, e))?;
        }
        let mpath = dir.join(MANIFEST);
        fs::write(&mpath, &manifest).map_err(|e| HydraError::io(&mpath, e))?;

        let mut counts: BTreeMap<Split, BTreeMap<String, usize>> = BTreeMap::new();
        for r in &self.records {
            *counts
                .entry(r.split)
                .or_default()
                .entry(self.classes[r.class_id].clone())
                .or_default() += 1;
        }
        let checksum = hash.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Ok(GenerateSummary { counts, checksum })
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| HydraError::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
            HydraError::parse("manifest", format!("{}: {e}", mpath.display()))
        })?;
        manifest.validate()?;
        let images = manifest
            .records
            .iter()
            .map(|r| load_png(&dir.join(&r.path)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            classes: manifest.classes,
            records: manifest.records,
            images,
        })
    }
}

/// Renders `spec` and writes it to `dir`.
pub fn generate(spec: &DatasetSpec, dir: &Path) -> Result<GenerateSummary> {
    Dataset::render(spec)?.save(dir)
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn encode_png(img: &Image) -> std::result::Result<Vec<u8>, image::ImageError> {
    let side = img.side() as u32;
    let bytes: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let mut out = Vec::new();
    image::write_buffer_with_format(
        &mut std::io::Cursor::new(&mut out),
        &bytes,
        side,
        side,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )?;
    Ok(out)
}

fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| HydraError::io(path, e))?;
    let rgb = img.to_rgb8();
    if rgb.width() as usize != PATCH_SIZE || rgb.height() as usize != PATCH_SIZE {
        return Err(HydraError::io(
            path,
            format!("expected {PATCH_SIZE}x{PATCH_SIZE}, found {}x{}", rgb.width(), rgb.height()),
        ));
    }
    Image::from_rgb8(PATCH_SIZE, rgb.as_raw())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            n_train: 6,
            n_test: 3,
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn counts_are_balanced() {
        let d = Dataset::render(&small()).unwrap();
        let per_class = |c| d.indices(Split::Train).filter(|&i| d.records[i].class_id == c).count();
        assert_eq!([per_class(0), per_class(1), per_class(2)], [2, 2, 2]);
        assert_eq!(d.indices(Split::Test).count(), 3);
    }

    #[test]
    fn rendering_is_order_independent() {
        let a = Dataset::render(&small()).unwrap();
        let b = Dataset::render(&DatasetSpec { n_test: 1, ..small() }).unwrap();
        assert_eq!(a.images[..7], b.images[..]);
        assert_ne!(a.images[0], a.images[3]);
    }

    #[test]
    fn manifest_validation_names_fields() {
        let mut m = Dataset::render(&small()).unwrap().manifest();
        m.records[3].cx = 1.5;
        match m.validate() {
            Err(HydraError::Parse { field, .. }) => assert_eq!(field, "records[3].cx"),
            other => panic!("{other:?}"),
        }
        let mut m = Dataset::render(&small()).unwrap().manifest();
        m.records[1].class_id = 7;
        assert!(matches!(m.validate(), Err(HydraError::Parse { field, .. }) if field == "records[1].class_id"));
        let mut m = Dataset::render(&small()).unwrap().manifest();
        m.records[2].id = m.records[0].id.clone();
        assert!(m.validate().is_err());
    }
}
