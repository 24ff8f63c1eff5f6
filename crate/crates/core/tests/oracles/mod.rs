//! Slow, direct reference implementations used to check the library.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use segfactory::augment::{ComposedScene, ObjectBankEntry, Placement};
use segfactory::dataset::CocoData;
use segfactory::imaging::{BinaryMask, RasterImage};
use segfactory::synthetic::{synthetic_scenes, SyntheticParams};
use segfactory::InstanceAnnotation;

/// Bank cut from synthetic scenes along their exact shape masks, plus the
/// scene backgrounds.
pub fn synthetic_bank(scenes: usize, seed: u64) -> (Vec<ObjectBankEntry>, Vec<RasterImage>) {
    let scenes = synthetic_scenes(&SyntheticParams::default(), scenes, seed).unwrap();
    let mut bank = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        for m in &s.masks {
            let id = bank.len() as u64 + 1;
            let ann = InstanceAnnotation::new(id, i as u64 + 1, s.class_id, m.clone(), 1.0);
            let depth = Some(&s.depth);
            bank.push(ObjectBankEntry::crop(id, &ann, &format!("s{i}"), &s.image, depth).unwrap());
        }
    }
    (bank, scenes.into_iter().map(|s| s.background).collect())
}

/// Exhaustive Otsu over pixel values: maximizes
/// `(n·s0 − S·w0)² / (w0·(n − w0))` exactly, smallest t on ties.
pub fn otsu(pixels: &[u8]) -> Option<u8> {
    let n = pixels.len() as u128;
    let total: u128 = pixels.iter().map(|&v| v as u128).sum();
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 0..=255u8 {
        let w0 = pixels.iter().filter(|&&v| v <= t).count() as u128;
        if w0 == 0 || w0 == n {
            continue;
        }
        let s0: u128 = pixels.iter().filter(|&&v| v <= t).map(|&v| v as u128).sum();
        let d = (n * s0).abs_diff(total * w0);
        let (num, den) = (d * d, w0 * (n - w0));
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t, num, den));
        }
    }
    best.map(|b| b.0)
}

/// Flood-fill labels in row-major first-encounter order; 0 is background.
pub fn flood_fill(m: &BinaryMask, eight: bool) -> Vec<u32> {
    let (w, h) = m.dims();
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    let mut steps: Vec<(i64, i64)> = vec![(1, 0), (-1, 0), (0, 1), (0, -1)];
    if eight {
        steps.extend([(1, 1), (1, -1), (-1, 1), (-1, -1)]);
    }
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) || labels[y * w + x] != 0 {
                continue;
            }
            next += 1;
            let mut queue = std::collections::VecDeque::from([(x, y)]);
            labels[y * w + x] = next;
            while let Some((cx, cy)) = queue.pop_front() {
                for (dx, dy) in &steps {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if m.get(nx, ny) && labels[ny * w + nx] == 0 {
                        labels[ny * w + nx] = next;
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
    }
    labels
}

/// Same partition of pixels, ignoring label names.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    let mut ab = BTreeMap::new();
    let mut ba = BTreeMap::new();
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(&x, &y)| (x == 0) == (y == 0) && *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density)).unwrap()
}

/// Column-major run lengths, starting with background.
pub fn runs(m: &BinaryMask) -> Vec<u64> {
    let (w, h) = m.dims();
    let bits: Vec<bool> = (0..w)
        .flat_map(|x| (0..h).map(move |y| (x, y)))
        .map(|(x, y)| m.get(x, y))
        .collect();
    let mut out = vec![];
    let mut cur = false;
    let mut i = 0;
    while i < bits.len() {
        let mut j = i;
        while j < bits.len() && bits[j] == cur {
            j += 1;
        }
        out.push((j - i) as u64);
        cur = !cur;
        i = j;
    }
    if out.is_empty() {
        out.push(0);
    }
    out
}

/// Scene pixels whose centers map into a foreground patch pixel.
pub fn rotated_mask(entry: &ObjectBankEntry, p: &Placement, w: usize, h: usize) -> BinaryMask {
    let (pw, ph) = entry.mask.dims();
    let (s, c) = p.angle.to_radians().sin_cos();
    BinaryMask::from_fn(w, h, |x, y| {
        let dx = x as f64 + 0.5 - p.center_x;
        let dy = y as f64 + 0.5 - p.center_y;
        let u = c * dx + s * dy + pw as f64 / 2.0;
        let v = -s * dx + c * dy + ph as f64 / 2.0;
        u >= 0.0 && v >= 0.0 && u < pw as f64 && v < ph as f64 && entry.mask.get(u as usize, v as usize)
    })
    .unwrap()
}

pub fn dilate_disc(m: &BinaryMask, r: u32) -> BinaryMask {
    let (w, h) = m.dims();
    let r = r as i64;
    BinaryMask::from_fn(w, h, |x, y| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                dx * dx + dy * dy <= r * r && m.get_signed(x as isize + dx as isize, y as isize + dy as isize)
            })
        })
    })
    .unwrap()
}

pub struct NeighborRules {
    pub gap: u32,
    pub max_overlap: f64,
}

/// Re-renders `scene` from its placements in z order and checks every
/// composition invariant. `background` is the prepared scene background.
pub fn check_composed(
    scene: &ComposedScene,
    bank: &[ObjectBankEntry],
    background: &RasterImage,
    min_visible_fraction: f64,
    neighbor: Option<&NeighborRules>,
) -> Result<(), String> {
    let (w, h) = scene.image.dims();
    let entry = |id: u64| {
        bank.iter()
            .find(|e| e.entry_id == id)
            .ok_or(format!("unknown entry {id}"))
    };
    let full: Vec<BinaryMask> = scene
        .placements
        .iter()
        .map(|p| Ok(rotated_mask(entry(p.entry_id)?, p, w, h)))
        .collect::<Result<_, String>>()?;
    // painter's algorithm: each pixel belongs to the last placement covering it
    let mut owner = vec![usize::MAX; w * h];
    for (z, m) in full.iter().enumerate() {
        for (x, y) in m.iter_foreground() {
            owner[y * w + x] = z;
        }
    }
    let mut painted = BinaryMask::new(w, h).unwrap();
    let mut expected: Vec<(u32, BinaryMask)> = Vec::new();
    for (z, p) in scene.placements.iter().enumerate() {
        if p.z_index as usize != z {
            return Err(format!("placement {z} has z_index {}", p.z_index));
        }
        let e = entry(p.entry_id)?;
        if p.class_id != e.class_id {
            return Err(format!("placement {z} class {} vs entry {}", p.class_id, e.class_id));
        }
        let visible = BinaryMask::from_fn(w, h, |x, y| owner[y * w + x] == z).unwrap();
        painted.union_in_place(&visible).unwrap();
        let (fa, va) = (full[z].count(), visible.count());
        if (fa, va) != (p.full_area, p.visible_area) {
            return Err(format!(
                "placement {z}: areas {fa}/{va}, stored {}/{}",
                p.full_area, p.visible_area
            ));
        }
        let keep = va > 0 && va as f64 >= min_visible_fraction * fa as f64;
        if keep != p.annotated {
            return Err(format!(
                "placement {z}: annotated {} but visibility says {keep}",
                p.annotated
            ));
        }
        if keep {
            expected.push((e.class_id, visible));
        }
    }
    if painted != scene.painted {
        return Err("painted set differs from the re-render".into());
    }
    if expected.len() != scene.annotations.len() {
        return Err(format!(
            "{} annotations, oracle {}",
            scene.annotations.len(),
            expected.len()
        ));
    }
    for (i, ((class, mask), a)) in expected.iter().zip(&scene.annotations).enumerate() {
        if a.category_id() != *class || a.mask() != mask {
            return Err(format!("annotation {i} differs from the re-rendered visible mask"));
        }
        if Some(a.bbox()) != mask.bbox() || a.area() != mask.count() {
            return Err(format!("annotation {i} bbox/area disagree with its mask"));
        }
        for b in &scene.annotations[i + 1..] {
            if a.mask().intersection_count(b.mask()).unwrap() != 0 {
                return Err("visible masks overlap".into());
            }
        }
    }
    let bg = background.to_rgb();
    for y in 0..h {
        for x in 0..w {
            if !painted.get(x, y) && scene.image.pixel(x, y) != bg.pixel(x, y) {
                return Err(format!("unpainted pixel ({x}, {y}) differs from the background"));
            }
        }
    }
    if let Some(rules) = neighbor {
        let group: Vec<usize> = (0..scene.placements.len())
            .filter(|&z| scene.placements[z].group)
            .collect();
        if group.is_empty() {
            return Err("neighboring scene without a group".into());
        }
        let class = scene.placements[group[0]].class_id;
        let mut union = full[group[0]].clone();
        for &z in &group[1..] {
            if scene.placements[z].class_id != class {
                return Err("group mixes classes".into());
            }
            let own = &full[z];
            if dilate_disc(own, rules.gap).intersection_count(&union).unwrap() == 0 {
                return Err(format!("group member {z} does not touch the group"));
            }
            let overlap = own.intersection_count(&union).unwrap();
            if overlap as f64 > rules.max_overlap * own.count() as f64 {
                return Err(format!("group member {z} overlaps {overlap} of {} pixels", own.count()));
            }
            union.union_in_place(own).unwrap();
        }
    }
    Ok(())
}

fn naive_overlap(a: &BinaryMask, b: &BinaryMask) -> (u64, u64) {
    let mut inter = 0;
    let mut union = 0;
    for (x, y) in (0..a.width()).flat_map(|x| (0..a.height()).map(move |y| (x, y))) {
        let (p, q) = (a.get(x, y), b.get(x, y));
        inter += u64::from(p && q);
        union += u64::from(p || q);
    }
    (inter, union)
}

/// mAP by the greedy protocol, recomputed naively per (class, threshold).
pub fn map(gt: &CocoData, pred: &CocoData) -> f64 {
    let mut classes: Vec<u32> = gt.categories.iter().map(|c| c.id).collect();
    classes.sort();
    let mut per_class = Vec::new();
    for &c in &classes {
        let g: Vec<&InstanceAnnotation> = gt.annotations.iter().filter(|a| a.category_id() == c).collect();
        let mut p: Vec<&InstanceAnnotation> = pred.annotations.iter().filter(|a| a.category_id() == c).collect();
        if g.is_empty() && p.is_empty() {
            continue;
        }
        if g.is_empty() {
            per_class.push(0.0);
            continue;
        }
        p.sort_by(|a, b| b.score().partial_cmp(&a.score()).unwrap().then(a.id().cmp(&b.id())));
        let mut aps = Vec::new();
        for k in 0..10u64 {
            let mut used = vec![false; g.len()];
            let mut tp = 0u64;
            let mut curve = Vec::new();
            for (rank, q) in p.iter().enumerate() {
                let mut best: Option<(usize, u64, u64)> = None;
                for (j, t) in g.iter().enumerate() {
                    if used[j] || t.image_id() != q.image_id() {
                        continue;
                    }
                    let (i, u) = naive_overlap(t.mask(), q.mask());
                    let better = match best {
                        None => true,
                        // higher IoU wins, exact comparison i/u > bi/bu; ties keep the lower id
                        Some((bj, bi, bu)) => {
                            let lhs = i as u128 * bu as u128;
                            let rhs = bi as u128 * u as u128;
                            lhs > rhs || (lhs == rhs && t.id() < g[bj].id())
                        }
                    };
                    if better {
                        best = Some((j, i, u));
                    }
                }
                if let Some((j, i, u)) = best {
                    if u > 0 && 100 * i >= (50 + 5 * k) * u {
                        used[j] = true;
                        tp += 1;
                    }
                }
                curve.push((tp, rank as u64 + 1));
            }
            let n = g.len() as u64;
            let mut ap = 0.0;
            for r in 0..=100u64 {
                let best = curve
                    .iter()
                    .filter(|&&(tp, _)| 100 * tp >= r * n)
                    .map(|&(tp, seen)| tp as f64 / seen as f64)
                    .fold(0.0, f64::max);
                ap += best;
            }
            aps.push(ap / 101.0);
        }
        per_class.push(aps.iter().sum::<f64>() / 10.0);
    }
    if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

fn random_rect(rng: &mut impl Rng, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let rw = rng.random_range(2..=w / 2);
    let rh = rng.random_range(2..=h / 2);
    (rng.random_range(0..=w - rw), rng.random_range(0..=h - rh), rw, rh)
}

fn rect_mask(w: usize, h: usize, (x0, y0, rw, rh): (usize, usize, usize, usize)) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh).unwrap()
}

/// Ground truth and predictions over the same images and classes. Each image
/// holds at most `max_per_image` of each; predictions are mostly jittered
/// copies of ground truth, scored from a small set so ties occur.
pub fn random_eval_pair(rng: &mut impl Rng, images: usize, classes: u32, max_per_image: usize) -> (CocoData, CocoData) {
    use segfactory::dataset::{CocoCategory, CocoImage};
    let (w, h) = (24, 20);
    let base = CocoData {
        images: (1..=images as u64)
            .map(|id| CocoImage {
                id,
                file_name: format!("{id}.png"),
                width: w,
                height: h,
            })
            .collect(),
        annotations: vec![],
        categories: (1..=classes)
            .map(|id| CocoCategory {
                id,
                name: format!("c{id}"),
            })
            .collect(),
    };
    let (mut gt, mut pred) = (base.clone(), base);
    for image in 1..=images as u64 {
        let mut rects = Vec::new();
        for _ in 0..rng.random_range(0..=max_per_image) {
            let r = random_rect(rng, w, h);
            let class = rng.random_range(1..=classes);
            rects.push((class, r));
            let id = gt.annotations.len() as u64 + 1;
            gt.annotations
                .push(InstanceAnnotation::new(id, image, class, rect_mask(w, h, r), 1.0));
        }
        for _ in 0..rng.random_range(0..=max_per_image) {
            let (class, r) = if !rects.is_empty() && rng.random_bool(0.75) {
                let (class, (x, y, rw, rh)) = rects[rng.random_range(0..rects.len())];
                let j = |rng: &mut _, v: usize, lo: usize, hi: usize| {
                    (v as i64 + Rng::random_range(rng, -2..=2i64)).clamp(lo as i64, hi as i64) as usize
                };
                let nx = j(rng, x, 0, w - 2);
                let ny = j(rng, y, 0, h - 2);
                let nw = j(rng, rw, 2, w - nx);
                let nh = j(rng, rh, 2, h - ny);
                let class = if rng.random_bool(0.1) {
                    rng.random_range(1..=classes)
                } else {
                    class
                };
                (class, (nx, ny, nw, nh))
            } else {
                (rng.random_range(1..=classes), random_rect(rng, w, h))
            };
            let score = [0.25, 0.5, 0.75, 1.0][rng.random_range(0..4)];
            let id = pred.annotations.len() as u64 + 1;
            pred.annotations
                .push(InstanceAnnotation::new(id, image, class, rect_mask(w, h, r), score));
        }
    }
    (gt, pred)
}

/// Every same-image, same-class (prediction, gt) pair whose IoU meets threshold `k`.
pub fn eligible_pairs(gt: &CocoData, pred: &CocoData, k: u64) -> std::collections::BTreeSet<(u64, u64)> {
    let mut out = std::collections::BTreeSet::new();
    for p in &pred.annotations {
        for g in &gt.annotations {
            if p.image_id() == g.image_id() && p.category_id() == g.category_id() {
                let (i, u) = naive_overlap(g.mask(), p.mask());
                if u > 0 && 100 * i >= (50 + 5 * k) * u {
                    out.insert((p.id(), g.id()));
                }
            }
        }
    }
    out
}
