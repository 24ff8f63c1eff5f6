use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::raster::{rasterize_at, rotated_half_extents, sample_rgb, Footprint};
use super::{ComposedScene, ObjectBankEntry, Placement, PlacementParams};
use crate::error::{Error, Result};
use crate::imaging::{dilate, BinaryMask, DepthImage, RasterImage, StructuringElement};
use crate::labeler::InstanceAnnotation;

struct Placed<'a> {
    entry: &'a ObjectBankEntry,
    center: (f64, f64),
    angle: f64,
    group: bool,
    footprint: Footprint,
}

struct Canvas<'a> {
    width: usize,
    height: usize,
    p: &'a PlacementParams,
    placed: Vec<Placed<'a>>,
    failures: Vec<String>,
}

impl<'a> Canvas<'a> {
    fn new(width: usize, height: usize, p: &'a PlacementParams) -> Self {
        Self {
            width,
            height,
            p,
            placed: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn draw_angle(&self, rng: &mut ChaCha8Rng) -> f64 {
        let [lo, hi] = self.p.rotation;
        if lo < hi {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    /// Center drawn uniformly over positions keeping the rotated box inside
    /// the image, or over the whole image when clipping is allowed.
    fn draw_center(&self, rng: &mut ChaCha8Rng, entry: &ObjectBankEntry, angle: f64) -> Option<(f64, f64)> {
        let (pw, ph) = entry.mask.dims();
        let (ex, ey) = rotated_half_extents(pw, ph, angle);
        let axis = |rng: &mut ChaCha8Rng, e: f64, n: usize| {
            let (lo, hi) = if self.p.allow_clipping {
                (0.0, n as f64)
            } else {
                (e, n as f64 - e)
            };
            if lo > hi {
                None
            } else if lo == hi {
                Some(lo)
            } else {
                Some(rng.random_range(lo..hi))
            }
        };
        let cx = axis(rng, ex, self.width)?;
        let cy = axis(rng, ey, self.height)?;
        Some((cx, cy))
    }

    fn fits(&self, entry: &ObjectBankEntry, (cx, cy): (f64, f64), angle: f64) -> bool {
        if self.p.allow_clipping {
            return true;
        }
        let (pw, ph) = entry.mask.dims();
        let (ex, ey) = rotated_half_extents(pw, ph, angle);
        cx - ex >= 0.0 && cy - ey >= 0.0 && cx + ex <= self.width as f64 && cy + ey <= self.height as f64
    }

    fn push(&mut self, entry: &'a ObjectBankEntry, center: (f64, f64), angle: f64, group: bool, footprint: Footprint) {
        self.placed.push(Placed {
            entry,
            center,
            angle,
            group,
            footprint,
        });
    }

    fn exhausted(&mut self, what: &str) {
        let n = self.placed.len() + self.failures.len();
        log::debug!("{what} {n}: no valid placement in {} attempts", self.p.max_attempts);
        self.failures.push(
            Error::PlacementExhausted {
                attempts: self.p.max_attempts,
            }
            .to_string(),
        );
    }

    /// One freely placed instance with the entry drawn from `pool`.
    fn place_random(&mut self, rng: &mut ChaCha8Rng, pool: &[&'a ObjectBankEntry]) -> bool {
        for _ in 0..self.p.max_attempts {
            let entry = pool[rng.random_range(0..pool.len())];
            let angle = self.draw_angle(rng);
            let Some(center) = self.draw_center(rng, entry, angle) else {
                continue;
            };
            let fp = rasterize_at(entry, center.0, center.1, angle, self.width, self.height);
            if fp.is_empty() {
                continue;
            }
            self.push(entry, center, angle, false, fp);
            return true;
        }
        self.exhausted("instance");
        false
    }

    /// Places `entry` next to the group: starting from a random member's
    /// center it moves outward along a random direction until the overlap
    /// with the group falls to the allowed fraction, then requires contact.
    fn place_adjacent(
        &mut self,
        rng: &mut ChaCha8Rng,
        entry: &'a ObjectBankEntry,
        members: &[usize],
        union: &BinaryMask,
        reach: &BinaryMask,
    ) -> bool {
        let max_steps = (self.width + self.height) * 2;
        for _ in 0..self.p.max_attempts {
            let angle = self.draw_angle(rng);
            let anchor = &self.placed[members[rng.random_range(0..members.len())]];
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (dir.cos(), dir.sin());
            let (ax, ay) = anchor.center;
            for step in 0..max_steps {
                let c = (ax + dx * step as f64, ay + dy * step as f64);
                let out_of_range = c.0 < 0.0 || c.1 < 0.0 || c.0 > self.width as f64 || c.1 > self.height as f64;
                if out_of_range {
                    break;
                }
                let fp = rasterize_at(entry, c.0, c.1, angle, self.width, self.height);
                let own = fp.area();
                if own == 0 {
                    continue;
                }
                let overlap = fp.pixels().filter(|&(x, y, _, _)| union.get(x, y)).count() as u64;
                if overlap as f64 > self.p.neighbor_max_overlap * own as f64 {
                    continue;
                }
                let touches = fp.pixels().any(|(x, y, _, _)| reach.get(x, y));
                if touches && self.fits(entry, c, angle) {
                    self.push(entry, c, angle, true, fp);
                    return true;
                }
                break;
            }
        }
        self.exhausted("group member");
        false
    }

    fn finish(
        self,
        background: &RasterImage,
        bg_depth: Option<&DepthImage>,
        with_depth: bool,
        background_id: usize,
        seed: u64,
    ) -> ComposedScene {
        let (w, h) = (self.width, self.height);
        let mut owner = vec![0u32; w * h];
        for (z, pl) in self.placed.iter().enumerate() {
            for (x, y, _, _) in pl.footprint.pixels() {
                owner[y * w + x] = z as u32 + 1;
            }
        }
        let mut image = background.to_rgb();
        let mut depth = with_depth.then(|| match bg_depth {
            Some(d) => d.clone(),
            None => DepthImage::filled(w, h, self.p.plane_depth_mm).expect("scene dimensions are valid"),
        });
        let base = depth.clone();
        let mut painted = BinaryMask::new(w, h).expect("scene dimensions are valid");
        let mut placements = Vec::with_capacity(self.placed.len());
        let mut annotations = Vec::new();
        for (z, pl) in self.placed.iter().enumerate() {
            let tag = z as u32 + 1;
            let offset = base.as_ref().and_then(|d| depth_offset(pl, d, self.p.plane_depth_mm));
            let mut visible = BinaryMask::new(w, h).expect("scene dimensions are valid");
            for (x, y, src, uv) in pl.footprint.pixels() {
                if owner[y * w + x] != tag {
                    continue;
                }
                visible.set(x, y, true);
                painted.set(x, y, true);
                image.pixel_mut(x, y).copy_from_slice(&sample_rgb(pl.entry, src, uv));
                if let Some(d) = depth.as_mut() {
                    let v = match (&pl.entry.depth, offset) {
                        (Some(patch), Some(off)) => match patch.data()[src as usize] {
                            0 => 0,
                            raw => (raw as i64 + off).clamp(1, u16::MAX as i64) as u16,
                        },
                        _ => 0,
                    };
                    d.set(x, y, v);
                }
            }
            let full_area = pl.footprint.area();
            let visible_area = visible.count();
            let annotated = visible_area > 0 && visible_area as f64 >= self.p.min_visible_fraction * full_area as f64;
            if annotated {
                let id = annotations.len() as u64 + 1;
                annotations.push(InstanceAnnotation::new(id, 0, pl.entry.class_id, visible, 1.0));
            }
            placements.push(Placement {
                entry_id: pl.entry.entry_id,
                class_id: pl.entry.class_id,
                center_x: pl.center.0,
                center_y: pl.center.1,
                angle: pl.angle,
                z_index: z as u32,
                group: pl.group,
                full_area,
                visible_area,
                annotated,
            });
        }
        ComposedScene {
            image,
            depth,
            placements,
            annotations,
            painted,
            background_id,
            seed,
            failures: self.failures,
        }
    }
}

/// Shift that puts the farthest valid patch sample on the background
/// surface under the placement center.
fn depth_offset(pl: &Placed<'_>, bg: &DepthImage, plane_mm: u16) -> Option<i64> {
    let patch = pl.entry.depth.as_ref()?;
    let far = patch
        .data()
        .iter()
        .zip(pl.entry.mask.bits())
        .filter(|&(&d, &m)| m && d > 0)
        .map(|(&d, _)| d)
        .max()?;
    let x = (pl.center.0.floor().max(0.0) as usize).min(bg.width() - 1);
    let y = (pl.center.1.floor().max(0.0) as usize).min(bg.height() - 1);
    let surface = match bg.get(x, y) {
        0 => plane_mm,
        v => v,
    };
    Some(surface as i64 - far as i64)
}

fn check_inputs(bank: &[ObjectBankEntry], p: &PlacementParams) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    p.validate()
}

fn draw_count(rng: &mut ChaCha8Rng, p: &PlacementParams) -> u32 {
    rng.random_range(p.count_min..=p.count_max)
}

pub(crate) fn plain_impl(
    bank: &[ObjectBankEntry],
    background: &RasterImage,
    bg_depth: Option<&DepthImage>,
    with_depth: bool,
    p: &PlacementParams,
    seed: u64,
    background_id: usize,
) -> Result<ComposedScene> {
    check_inputs(bank, p)?;
    if let Some(d) = bg_depth {
        if d.dims() != background.dims() {
            return Err(Error::DimensionMismatch {
                left: background.dims(),
                right: d.dims(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = draw_count(&mut rng, p);
    let pool: Vec<&ObjectBankEntry> = bank.iter().collect();
    let mut canvas = Canvas::new(background.width(), background.height(), p);
    for _ in 0..n {
        canvas.place_random(&mut rng, &pool);
    }
    Ok(canvas.finish(background, bg_depth, with_depth, background_id, seed))
}

/// Random paste composition onto `background`.
pub fn compose_scene(
    bank: &[ObjectBankEntry],
    background: &RasterImage,
    p: &PlacementParams,
    seed: u64,
) -> Result<ComposedScene> {
    plain_impl(bank, background, None, false, p, seed, 0)
}

/// Like [`compose_scene`], also composing a depth channel. Without a
/// background depth the background is a plane at `plane_depth_mm`.
pub fn compose_scene_with_depth(
    bank: &[ObjectBankEntry],
    background: &RasterImage,
    bg_depth: Option<&DepthImage>,
    p: &PlacementParams,
    seed: u64,
) -> Result<ComposedScene> {
    plain_impl(bank, background, bg_depth, true, p, seed, 0)
}

/// A same-class touching group on top of optional free extras.
pub fn compose_neighboring(
    bank: &[ObjectBankEntry],
    background: &RasterImage,
    p: &PlacementParams,
    seed: u64,
) -> Result<ComposedScene> {
    check_inputs(bank, p)?;
    let [gmin, gmax] = p.neighbor_group_size;
    let mut by_class: BTreeMap<u32, Vec<&ObjectBankEntry>> = BTreeMap::new();
    for e in bank {
        by_class.entry(e.class_id).or_default().push(e);
    }
    by_class.retain(|_, v| v.len() >= gmin as usize);
    if by_class.is_empty() {
        return Err(Error::NoEligibleClass { needed: gmin as usize });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<&Vec<&ObjectBankEntry>> = by_class.values().collect();
    let members = classes[rng.random_range(0..classes.len())];
    let k = (rng.random_range(gmin..=gmax) as usize).min(members.len());
    let group: Vec<&ObjectBankEntry> = sample(&mut rng, members.len(), k)
        .into_iter()
        .map(|i| members[i])
        .collect();
    let extras = if p.neighbor_extras {
        (draw_count(&mut rng, p) as usize).saturating_sub(k)
    } else {
        0
    };

    let (w, h) = background.dims();
    let mut canvas = Canvas::new(w, h, p);
    let pool: Vec<&ObjectBankEntry> = bank.iter().collect();
    for _ in 0..extras {
        canvas.place_random(&mut rng, &pool);
    }

    let gap = StructuringElement::disc(p.neighbor_gap).ok();
    let mut union = BinaryMask::new(w, h)?;
    let mut placed_members: Vec<usize> = Vec::new();
    for (i, &entry) in group.iter().enumerate() {
        let ok = if i == 0 || placed_members.is_empty() {
            let placed = canvas.place_random(&mut rng, &[entry]);
            if placed {
                canvas.placed.last_mut().expect("just placed").group = true;
            }
            placed
        } else {
            let reach = match &gap {
                Some(se) => dilate(&union, se),
                None => union.clone(),
            };
            canvas.place_adjacent(&mut rng, entry, &placed_members, &union, &reach)
        };
        if ok {
            let idx = canvas.placed.len() - 1;
            for (x, y, _, _) in canvas.placed[idx].footprint.pixels() {
                union.set(x, y, true);
            }
            placed_members.push(idx);
        }
    }
    Ok(canvas.finish(background, None, false, 0, seed))
}

/// Index into `pool` drawn from a stream independent of the composition.
pub(crate) fn pick_background(pool_len: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng.random_range(0..pool_len)
}

pub(crate) fn prepare_background(bg: &RasterImage, p: &PlacementParams) -> Result<RasterImage> {
    match p.target_size {
        Some([tw, th]) if (tw, th) != bg.dims() => Ok(bg.resize(tw, th)?.to_rgb()),
        _ => Ok(bg.to_rgb()),
    }
}

/// Draws a background from `pool`, then composes as [`compose_scene`].
pub fn compose_on_random_background(
    bank: &[ObjectBankEntry],
    pool: &[RasterImage],
    p: &PlacementParams,
    seed: u64,
) -> Result<ComposedScene> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let idx = pick_background(pool.len(), seed);
    let bg = prepare_background(&pool[idx], p)?;
    plain_impl(bank, &bg, None, false, p, seed, idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::CircularRegion;

    fn disc_entry(id: u64, class_id: u32, r: f64, color: [u8; 3]) -> ObjectBankEntry {
        let n = (2.0 * r).ceil() as usize;
        let region = CircularRegion::new(r, r, r).unwrap();
        let mask = region.to_mask(n, n).unwrap();
        let rgb = RasterImage::from_fn(n, n, 3, |x, y| if mask.get(x, y) { color } else { [0; 3] }).unwrap();
        ObjectBankEntry {
            entry_id: id,
            class_id,
            rgb,
            depth: Some(DepthImage::from_fn(n, n, |x, y| if mask.get(x, y) { 950 } else { 0 }).unwrap()),
            mask,
            source_scene_id: "s".into(),
            source_annotation_id: id,
        }
    }

    fn bg() -> RasterImage {
        RasterImage::filled(160, 120, &[20, 20, 20]).unwrap()
    }

    #[test]
    fn empty_bank() {
        let r = compose_scene(&[], &bg(), &PlacementParams::default(), 1);
        assert!(matches!(r, Err(Error::EmptyBank)));
    }

    #[test]
    fn fixed_count_and_disjoint() {
        let bank = [disc_entry(1, 1, 10.0, [200, 0, 0])];
        let p = PlacementParams {
            count_min: 3,
            count_max: 3,
            ..Default::default()
        };
        let s = compose_scene(&bank, &bg(), &p, 5).unwrap();
        assert_eq!(s.placements.len(), 3);
        assert!(s.annotations.len() <= 3);
        for (i, a) in s.annotations.iter().enumerate() {
            for b in &s.annotations[i + 1..] {
                assert_eq!(a.mask().intersection_count(b.mask()).unwrap(), 0);
            }
        }
    }

    #[test]
    fn deterministic() {
        let bank = [disc_entry(1, 1, 8.0, [200, 0, 0]), disc_entry(2, 2, 12.0, [0, 200, 0])];
        let p = PlacementParams::default();
        let a = compose_scene(&bank, &bg(), &p, 99).unwrap();
        let b = compose_scene(&bank, &bg(), &p, 99).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.placements, b.placements);
        let c = compose_neighboring(
            &bank,
            &bg(),
            &PlacementParams {
                neighbor_group_size: [1, 1],
                ..p
            },
            3,
        )
        .unwrap();
        let d = compose_neighboring(
            &bank,
            &bg(),
            &PlacementParams {
                neighbor_group_size: [1, 1],
                ..p
            },
            3,
        )
        .unwrap();
        assert_eq!(c.image, d.image);
    }

    #[test]
    fn identical_placements_occlude_fully() {
        let entry = disc_entry(1, 1, 10.0, [200, 0, 0]);
        let p = PlacementParams::default();
        let mut canvas = Canvas::new(100, 100, &p);
        for _ in 0..2 {
            let fp = rasterize_at(&entry, 50.0, 50.0, 30.0, 100, 100);
            canvas.push(&entry, (50.0, 50.0), 30.0, false, fp);
        }
        let s = canvas.finish(&RasterImage::filled(100, 100, &[0, 0, 0]).unwrap(), None, false, 0, 0);
        assert_eq!(s.placements[0].visible_area, 0);
        assert!(!s.placements[0].annotated);
        assert_eq!(s.annotations.len(), 1);
        assert_eq!(s.annotations[0].area(), s.placements[1].full_area);
    }

    #[test]
    fn singleton_classes_not_eligible() {
        let bank = [disc_entry(1, 1, 8.0, [1, 1, 1]), disc_entry(2, 2, 8.0, [1, 1, 1])];
        let r = compose_neighboring(&bank, &bg(), &PlacementParams::default(), 0);
        assert!(matches!(r, Err(Error::NoEligibleClass { needed: 2 })));
    }

    #[test]
    fn depth_rests_on_plane() {
        let bank = [disc_entry(1, 1, 8.0, [100, 100, 100])];
        let p = PlacementParams {
            count_min: 1,
            count_max: 1,
            ..Default::default()
        };
        let s = compose_scene_with_depth(&bank, &bg(), None, &p, 4).unwrap();
        let d = s.depth.unwrap();
        for (x, y) in s.painted.iter_foreground() {
            assert_eq!(d.get(x, y), 1000);
        }
        assert_eq!(d.get(0, 0), 1000);
    }

    #[test]
    fn empty_pool() {
        let bank = [disc_entry(1, 1, 8.0, [1, 1, 1])];
        let r = compose_on_random_background(&bank, &[], &PlacementParams::default(), 0);
        assert!(matches!(r, Err(Error::EmptyPool)));
    }
}
