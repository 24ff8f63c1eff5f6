//! COCO-style instance annotation files.
//!
//! Written documents use uncompressed column-major RLE with integer boxes and
//! areas. The reader also accepts polygon segmentations, compressed string
//! RLE and fractional boxes from other tools.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imaging::{rle_decode, BinaryMask, Rle};
use crate::labeler::InstanceAnnotation;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Raw(Vec<u64>),
    Compressed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Rle { size: [usize; 2], counts: RleCounts },
    Polygons(Vec<Vec<f64>>),
}

fn integral_numbers<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for &x in v {
        if x.fract() == 0.0 && x.abs() < 9.0e15 {
            seq.serialize_element(&(x as i64))?;
        } else {
            seq.serialize_element(&x)?;
        }
    }
    seq.end()
}

fn integral_number<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        s.serialize_i64(*v as i64)
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub segmentation: Segmentation,
    #[serde(serialize_with = "integral_numbers")]
    pub bbox: Vec<f64>,
    #[serde(serialize_with = "integral_number")]
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDocument {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// Decoded contents of a document: masks at full image resolution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CocoData {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<InstanceAnnotation>,
    pub categories: Vec<CocoCategory>,
}

fn duplicates<T: std::hash::Hash + Eq + std::fmt::Display>(
    what: &str,
    ids: impl Iterator<Item = T>,
    out: &mut Vec<String>,
) {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.to_string()) {
            out.push(format!("duplicate {what} id {id}"));
        }
    }
}

fn reference_problems(
    images: &[CocoImage],
    categories: &[CocoCategory],
    anns: impl Iterator<Item = (u64, u64, u32)> + Clone,
) -> Vec<String> {
    let mut out = Vec::new();
    duplicates("image", images.iter().map(|i| i.id), &mut out);
    duplicates("category", categories.iter().map(|c| c.id), &mut out);
    duplicates("annotation", anns.clone().map(|a| a.0), &mut out);
    let image_ids: HashSet<u64> = images.iter().map(|i| i.id).collect();
    let cat_ids: HashSet<u32> = categories.iter().map(|c| c.id).collect();
    for (id, image_id, cat) in anns {
        if !image_ids.contains(&image_id) {
            out.push(format!("annotation {id} references unknown image {image_id}"));
        }
        if !cat_ids.contains(&cat) {
            out.push(format!("annotation {id} references unknown category {cat}"));
        }
    }
    out
}

impl CocoData {
    /// Checks id uniqueness and that every annotation references an existing
    /// image (with matching size) and category.
    pub fn check_integrity(&self) -> Result<()> {
        let mut problems = reference_problems(
            &self.images,
            &self.categories,
            self.annotations.iter().map(|a| (a.id(), a.image_id(), a.category_id())),
        );
        let sizes: HashMap<u64, (usize, usize)> = self.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
        for a in &self.annotations {
            if let Some(&dims) = sizes.get(&a.image_id()) {
                if dims != a.mask().dims() {
                    problems.push(format!(
                        "annotation {} mask is {:?} but image {} is {:?}",
                        a.id(),
                        a.mask().dims(),
                        a.image_id(),
                        dims
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Integrity(problems))
        }
    }

    pub fn to_document(&self) -> Result<CocoDocument> {
        self.check_integrity()?;
        let annotations = self.annotations.iter().map(CocoAnnotation::from).collect();
        Ok(CocoDocument {
            images: self.images.clone(),
            annotations,
            categories: self.categories.clone(),
        })
    }
}

impl From<&InstanceAnnotation> for CocoAnnotation {
    fn from(a: &InstanceAnnotation) -> Self {
        let b = a.bbox();
        let rle = Rle::from(a.mask());
        CocoAnnotation {
            id: a.id(),
            image_id: a.image_id(),
            category_id: a.category_id(),
            segmentation: Segmentation::Rle {
                size: rle.size,
                counts: RleCounts::Raw(rle.counts),
            },
            bbox: vec![b.x as f64, b.y as f64, b.w as f64, b.h as f64],
            area: a.area() as f64,
            iscrowd: 0,
            score: Some(a.score()),
        }
    }
}

impl CocoDocument {
    /// Id uniqueness and referential integrity, without decoding masks.
    pub fn check_references(&self) -> Result<()> {
        let problems = reference_problems(
            &self.images,
            &self.categories,
            self.annotations.iter().map(|a| (a.id, a.image_id, a.category_id)),
        );
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Integrity(problems))
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8], origin: &Path) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        super::write_atomic(path.as_ref(), &self.to_json()?)
    }

    /// Decodes every segmentation; missing scores become `default_score`.
    pub fn decode(&self, default_score: f64) -> Result<CocoData> {
        let problems = reference_problems(
            &self.images,
            &self.categories,
            self.annotations.iter().map(|a| (a.id, a.image_id, a.category_id)),
        );
        if !problems.is_empty() {
            return Err(Error::Integrity(problems));
        }
        let sizes: HashMap<u64, (usize, usize)> = self.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
        let mut annotations = Vec::with_capacity(self.annotations.len());
        for a in &self.annotations {
            let (w, h) = sizes[&a.image_id];
            let mask = decode_segmentation(&a.segmentation, w, h)
                .map_err(|e| Error::Integrity(vec![format!("annotation {}: {e}", a.id)]))?;
            annotations.push(InstanceAnnotation::new(
                a.id,
                a.image_id,
                a.category_id,
                mask,
                a.score.unwrap_or(default_score),
            ));
        }
        let data = CocoData {
            images: self.images.clone(),
            annotations,
            categories: self.categories.clone(),
        };
        data.check_integrity()?;
        Ok(data)
    }
}

/// Writes `data` as a document at `path`.
pub fn export_coco(data: &CocoData, path: impl AsRef<Path>) -> Result<CocoDocument> {
    let doc = data.to_document()?;
    doc.save(path)?;
    Ok(doc)
}

/// Reads and decodes a document; missing scores read as 1.0.
pub fn import_coco(path: impl AsRef<Path>) -> Result<CocoData> {
    CocoDocument::load(path)?.decode(1.0)
}

fn decode_segmentation(seg: &Segmentation, width: usize, height: usize) -> Result<BinaryMask> {
    match seg {
        Segmentation::Rle { size, counts } => {
            if *size != [height, width] {
                return Err(Error::MalformedRle(format!(
                    "size {size:?} differs from image [{height}, {width}]"
                )));
            }
            let counts = match counts {
                RleCounts::Raw(c) => c.clone(),
                RleCounts::Compressed(s) => decompress_counts(s)?,
            };
            rle_decode(&counts, width, height)
        }
        Segmentation::Polygons(polys) => {
            let mut mask = BinaryMask::new(width, height)?;
            for poly in polys {
                mask.union_in_place(&rasterize_polygon(poly, width, height)?)?;
            }
            Ok(mask)
        }
    }
}

/// Decodes the compact string form of RLE counts used by COCO tooling.
pub fn decompress_counts(s: &str) -> Result<Vec<u64>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<u64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err(Error::MalformedRle("truncated compressed counts".into()));
            };
            if !(48..48 + 64).contains(&b) {
                return Err(Error::MalformedRle(format!("invalid character {:?}", b as char)));
            }
            let c = (b - 48) as i64;
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
            if k > 12 {
                return Err(Error::MalformedRle("count too long".into()));
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2] as i64;
        }
        if x < 0 {
            return Err(Error::MalformedRle("negative run length".into()));
        }
        counts.push(x as u64);
    }
    Ok(counts)
}

/// Even-odd fill: a pixel is inside iff its center is.
pub fn rasterize_polygon(coords: &[f64], width: usize, height: usize) -> Result<BinaryMask> {
    if coords.len() < 6 || !coords.len().is_multiple_of(2) {
        return Err(Error::InvalidGeometry(format!(
            "polygon needs at least 3 points, got {} coordinates",
            coords.len()
        )));
    }
    let pts: Vec<(f64, f64)> = coords.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let mut mask = BinaryMask::new(width, height)?;
    let mut xs = Vec::new();
    for y in 0..height {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..pts.len() {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % pts.len()];
            // half-open rule so shared vertices count once
            if (y0 <= yc) != (y1 <= yc) {
                xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // centers strictly inside [a, b)
            let start = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let end = ((pair[1] - 0.5).ceil().max(0.0) as usize).min(width);
            for x in start..end {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}
