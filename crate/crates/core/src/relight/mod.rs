//! Re-shading of composed scenes from their depth channel.
//!
//! Camera frame: +x right, +y down, +z forward, meters. Pixel `(u, v)`
//! unprojects with its integer index, so pixel `(cx, cy)` lies on the
//! principal ray.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::ComposedScene;
use crate::error::{Error, Result};
use crate::imaging::{DepthImage, RasterImage};

type V3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive and finite, got fx={fx} fy={fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// 1080 px focal length at 1920 px width, scaled with the width;
    /// principal point at the image center.
    pub fn default_for(width: usize, height: usize) -> Self {
        let f = 1080.0 * width as f64 / 1920.0;
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }
}

/// Per-pixel camera-frame points; `None` where depth is invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Option<V3>>,
}

impl PointCloud {
    /// Unprojects depths given in meters; zero or non-finite values are invalid.
    pub fn from_depth_meters(width: usize, height: usize, z: &[f64], k: &CameraIntrinsics) -> Result<Self> {
        if z.len() != width * height {
            return Err(Error::InvalidGeometry(format!(
                "expected {} depth samples, got {}",
                width * height,
                z.len()
            )));
        }
        let points = z
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                if !(z > 0.0 && z.is_finite()) {
                    return None;
                }
                let (u, v) = ((i % width) as f64, (i / width) as f64);
                Some(V3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z))
            })
            .collect();
        Ok(Self { width, height, points })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<V3> {
        self.points[y * self.width + x]
    }
}

pub fn depth_to_points(d: &DepthImage, k: &CameraIntrinsics) -> PointCloud {
    let z: Vec<f64> = d.data().iter().map(|&mm| mm as f64 / 1000.0).collect();
    PointCloud::from_depth_meters(d.width(), d.height(), &z, k).expect("sample count matches")
}

/// Unit normals facing the camera (`n_z < 0`); `None` where undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Option<V3>>,
}

impl NormalMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<V3> {
        self.normals[y * self.width + x]
    }
}

/// Central difference along one axis, one-sided at the image border.
/// Any in-image neighbor without a point makes the derivative undefined.
fn derivative(prev: Option<Option<V3>>, here: V3, next: Option<Option<V3>>) -> Option<V3> {
    match (prev, next) {
        (Some(Some(a)), Some(Some(b))) => Some((b - a) / 2.0),
        (None, Some(Some(b))) => Some(b - here),
        (Some(Some(a)), None) => Some(here - a),
        _ => None,
    }
}

pub fn normals_from_depth(points: &PointCloud) -> NormalMap {
    let (w, h) = (points.width, points.height);
    let at = |x: isize, y: isize| -> Option<Option<V3>> {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            None
        } else {
            Some(points.get(x as usize, y as usize))
        }
    };
    let mut normals = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let n = at(x, y).flatten().and_then(|p| {
                let du = derivative(at(x - 1, y), p, at(x + 1, y))?;
                let dv = derivative(at(x, y - 1), p, at(x, y + 1))?;
                let n = du.cross(&dv);
                let len = n.norm();
                if !(len > 1e-300) {
                    return None;
                }
                let n = n / len;
                Some(if n.z > 0.0 { -n } else { n })
            });
            normals.push(n);
        }
    }
    NormalMap {
        width: w,
        height: h,
        normals,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhongMaterial {
    pub ka: f64,
    pub kd: f64,
    pub ks: f64,
    pub shininess: f64,
}

impl Default for PhongMaterial {
    fn default() -> Self {
        Self {
            ka: 1.0,
            kd: 0.8,
            ks: 0.2,
            shininess: 16.0,
        }
    }
}

impl PhongMaterial {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.ka, self.kd, self.ks].iter().all(|c| c.is_finite() && *c >= 0.0)
            && self.shininess.is_finite()
            && self.shininess >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid material {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotLight {
    pub position: [f64; 3],
    pub direction: [f64; 3],
    /// Degrees from the axis; full intensity inside.
    pub inner_angle: f64,
    /// Degrees from the axis; dark outside.
    pub outer_angle: f64,
    pub intensity: f64,
    /// Scale by `1/d²` with `d` the distance to the light in meters.
    #[serde(default)]
    pub attenuation: bool,
}

impl SpotLight {
    pub fn validate(&self) -> Result<()> {
        let d = V3::from(self.direction);
        let ok = (d.norm() - 1.0).abs() < 1e-6
            && self.inner_angle > 0.0
            && self.inner_angle <= self.outer_angle
            && self.outer_angle <= 90.0
            && self.intensity >= 0.0
            && self.position.iter().all(|c| c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid spotlight {self:?}")))
        }
    }

    /// 1 inside the inner cone, 0 outside the outer one, linear in the cosine between.
    fn cone_factor(&self, to_light: &V3) -> f64 {
        let cos = (-to_light).dot(&V3::from(self.direction));
        let cos_in = self.inner_angle.to_radians().cos();
        let cos_out = self.outer_angle.to_radians().cos();
        if cos >= cos_in {
            1.0
        } else if cos < cos_out {
            0.0
        } else {
            (cos - cos_out) / (cos_in - cos_out)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightingSpec {
    pub spot: SpotLight,
    pub ambient_intensity: f64,
    pub material: PhongMaterial,
    pub seed: u64,
}

impl LightingSpec {
    pub fn validate(&self) -> Result<()> {
        self.spot.validate()?;
        self.material.validate()?;
        if !(self.ambient_intensity >= 0.0 && self.ambient_intensity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ambient intensity must be non-negative, got {}",
                self.ambient_intensity
            )));
        }
        Ok(())
    }
}

fn ambient_only(rho: f64, spec: &LightingSpec) -> f64 {
    spec.material.ka * spec.ambient_intensity * rho
}

/// Intensity in `[0, 1]` for albedo `rho` at point `p` with normal `n`,
/// viewed along `view` (unit vector from the point toward the eye).
fn shade(rho: [f64; 3], p: &V3, n: &V3, view: &V3, spec: &LightingSpec) -> [f64; 3] {
    let m = &spec.material;
    let to_light = V3::from(spec.spot.position) - p;
    let dist = to_light.norm();
    if dist == 0.0 {
        return rho.map(|r| ambient_only(r, spec).clamp(0.0, 1.0));
    }
    let l = to_light / dist;
    let mut light = spec.spot.cone_factor(&l) * spec.spot.intensity;
    if spec.spot.attenuation {
        light /= dist * dist;
    }
    let ndotl = n.dot(&l);
    let diff = m.kd * ndotl.max(0.0);
    let r = 2.0 * ndotl * n - l;
    let spec_term = if m.ks > 0.0 {
        m.ks * r.dot(view).max(0.0).powf(m.shininess)
    } else {
        0.0
    };
    rho.map(|r| (ambient_only(r, spec) + light * (diff * r + spec_term)).clamp(0.0, 1.0))
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round() as u8
}

fn check_dims(albedo: &RasterImage, w: usize, h: usize) -> Result<()> {
    if albedo.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            left: albedo.dims(),
            right: (w, h),
        });
    }
    Ok(())
}

fn shade_image(
    albedo: &RasterImage,
    normals: &NormalMap,
    points: &PointCloud,
    spec: &LightingSpec,
    view: impl Fn(&V3) -> V3,
) -> Result<RasterImage> {
    check_dims(albedo, normals.width, normals.height)?;
    check_dims(albedo, points.width, points.height)?;
    let src = albedo.to_rgb();
    let (w, h) = src.dims();
    let mut out = RasterImage::new(w, h, 3)?;
    for y in 0..h {
        for x in 0..w {
            let px = src.pixel(x, y);
            let rho = [px[0], px[1], px[2]].map(|c| c as f64 / 255.0);
            let v = match (points.get(x, y), normals.get(x, y)) {
                (Some(p), Some(n)) => shade(rho, &p, &n, &view(&p), spec),
                _ => rho.map(|r| ambient_only(r, spec).clamp(0.0, 1.0)),
            };
            out.pixel_mut(x, y).copy_from_slice(&v.map(to_u8));
        }
    }
    Ok(out)
}

/// Phong shading of `albedo` under the spotlight and ambient term of `spec`.
/// Pixels without a normal get ambient light only.
pub fn phong_shade(
    albedo: &RasterImage,
    normals: &NormalMap,
    points: &PointCloud,
    spec: &LightingSpec,
) -> Result<RasterImage> {
    shade_image(albedo, normals, points, spec, |p| -p.normalize())
}

fn default_spot_x() -> [f64; 2] {
    [-0.4, 0.4]
}
fn default_spot_z() -> [f64; 2] {
    [0.0, 0.4]
}
fn default_target() -> [f64; 2] {
    [-0.25, 0.25]
}
fn default_plane() -> f64 {
    1.0
}
fn default_inner() -> [f64; 2] {
    [15.0, 35.0]
}
fn default_falloff() -> [f64; 2] {
    [5.0, 20.0]
}
fn default_intensity() -> [f64; 2] {
    [0.4, 1.2]
}
fn default_ambient() -> [f64; 2] {
    [0.3, 0.8]
}
fn default_ka() -> [f64; 2] {
    [0.8, 1.0]
}
fn default_kd() -> [f64; 2] {
    [0.5, 1.0]
}
fn default_ks() -> [f64; 2] {
    [0.0, 0.5]
}
fn default_shininess() -> [f64; 2] {
    [4.0, 64.0]
}

/// Sampling box for [`sample_lighting`]; every pair is an inclusive `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightingRanges {
    #[serde(default = "default_spot_x")]
    pub spot_x: [f64; 2],
    #[serde(default = "default_spot_x")]
    pub spot_y: [f64; 2],
    #[serde(default = "default_spot_z")]
    pub spot_z: [f64; 2],
    #[serde(default = "default_target")]
    pub target_x: [f64; 2],
    #[serde(default = "default_target")]
    pub target_y: [f64; 2],
    /// Depth of the background plane the spotlight aims at, meters.
    #[serde(default = "default_plane")]
    pub plane_z: f64,
    #[serde(default = "default_inner")]
    pub inner_angle: [f64; 2],
    /// Added to the inner angle to give the outer angle, capped at 90.
    #[serde(default = "default_falloff")]
    pub falloff_angle: [f64; 2],
    #[serde(default = "default_intensity")]
    pub spot_intensity: [f64; 2],
    #[serde(default = "default_ambient")]
    pub ambient_intensity: [f64; 2],
    #[serde(default = "default_ka")]
    pub ka: [f64; 2],
    #[serde(default = "default_kd")]
    pub kd: [f64; 2],
    #[serde(default = "default_ks")]
    pub ks: [f64; 2],
    #[serde(default = "default_shininess")]
    pub shininess: [f64; 2],
    #[serde(default)]
    pub attenuation: bool,
}

impl Default for LightingRanges {
    fn default() -> Self {
        Self {
            spot_x: default_spot_x(),
            spot_y: default_spot_x(),
            spot_z: default_spot_z(),
            target_x: default_target(),
            target_y: default_target(),
            plane_z: default_plane(),
            inner_angle: default_inner(),
            falloff_angle: default_falloff(),
            spot_intensity: default_intensity(),
            ambient_intensity: default_ambient(),
            ka: default_ka(),
            kd: default_kd(),
            ks: default_ks(),
            shininess: default_shininess(),
            attenuation: false,
        }
    }
}

impl LightingRanges {
    fn pairs(&self) -> [(&'static str, [f64; 2]); 14] {
        [
            ("spot_x", self.spot_x),
            ("spot_y", self.spot_y),
            ("spot_z", self.spot_z),
            ("target_x", self.target_x),
            ("target_y", self.target_y),
            ("inner_angle", self.inner_angle),
            ("falloff_angle", self.falloff_angle),
            ("spot_intensity", self.spot_intensity),
            ("ambient_intensity", self.ambient_intensity),
            ("ka", self.ka),
            ("kd", self.kd),
            ("ks", self.ks),
            ("shininess", self.shininess),
            ("plane_z", [self.plane_z, self.plane_z]),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in self.pairs() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "{name} range [{lo}, {hi}] is not ordered"
                )));
            }
        }
        let nonneg = [
            self.spot_intensity,
            self.ambient_intensity,
            self.ka,
            self.kd,
            self.ks,
            self.falloff_angle,
        ];
        if nonneg.iter().any(|r| r[0] < 0.0) {
            return Err(Error::InvalidParameter(
                "intensities, reflectances and falloff must be non-negative".into(),
            ));
        }
        if self.inner_angle[0] <= 0.0 || self.inner_angle[1] > 90.0 {
            return Err(Error::InvalidParameter("inner_angle must lie in (0, 90]".into()));
        }
        if self.shininess[0] < 1.0 {
            return Err(Error::InvalidParameter("shininess must be at least 1".into()));
        }
        if self.spot_z[1] >= self.plane_z {
            return Err(Error::InvalidParameter(
                "the spotlight must lie in front of the background plane".into(),
            ));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Uniform draw of a spotlight aimed at a random point of the background plane.
pub fn sample_lighting(seed: u64, ranges: &LightingRanges) -> Result<LightingSpec> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let position = V3::new(
        draw(&mut rng, ranges.spot_x),
        draw(&mut rng, ranges.spot_y),
        draw(&mut rng, ranges.spot_z),
    );
    let target = V3::new(
        draw(&mut rng, ranges.target_x),
        draw(&mut rng, ranges.target_y),
        ranges.plane_z,
    );
    let direction = (target - position).normalize();
    let inner = draw(&mut rng, ranges.inner_angle);
    let outer = (inner + draw(&mut rng, ranges.falloff_angle)).min(90.0);
    let spot = SpotLight {
        position: position.into(),
        direction: direction.into(),
        inner_angle: inner,
        outer_angle: outer,
        intensity: draw(&mut rng, ranges.spot_intensity),
        attenuation: ranges.attenuation,
    };
    let ambient_intensity = draw(&mut rng, ranges.ambient_intensity);
    let material = PhongMaterial {
        ka: draw(&mut rng, ranges.ka),
        kd: draw(&mut rng, ranges.kd),
        ks: draw(&mut rng, ranges.ks),
        shininess: draw(&mut rng, ranges.shininess),
    };
    Ok(LightingSpec {
        spot,
        ambient_intensity,
        material,
        seed,
    })
}

/// Same scene with the image re-shaded; the composed RGB is the albedo.
pub fn relight_scene(scene: &ComposedScene, k: &CameraIntrinsics, spec: &LightingSpec) -> Result<ComposedScene> {
    let depth = scene.depth.as_ref().ok_or(Error::MissingDepth)?;
    spec.validate()?;
    let points = depth_to_points(depth, k);
    let normals = normals_from_depth(&points);
    let image = phong_shade(&scene.image, &normals, &points, spec)?;
    Ok(ComposedScene { image, ..scene.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(intensity: f64, ambient: f64, material: PhongMaterial) -> LightingSpec {
        LightingSpec {
            spot: SpotLight {
                position: [0.0, 0.0, -1.0],
                direction: [0.0, 0.0, 1.0],
                inner_angle: 30.0,
                outer_angle: 45.0,
                intensity,
                attenuation: false,
            },
            ambient_intensity: ambient,
            material,
            seed: 0,
        }
    }

    fn plane(w: usize, h: usize, mm: u16) -> (PointCloud, NormalMap) {
        let k = CameraIntrinsics::new(500.0, 500.0, w as f64 / 2.0, h as f64 / 2.0).unwrap();
        let pts = depth_to_points(&DepthImage::filled(w, h, mm).unwrap(), &k);
        let n = normals_from_depth(&pts);
        (pts, n)
    }

    #[test]
    fn principal_ray_and_invalid() {
        let k = CameraIntrinsics::new(500.0, 500.0, 2.0, 1.0).unwrap();
        let mut d = DepthImage::filled(4, 3, 1000).unwrap();
        d.set(0, 0, 0);
        let pts = depth_to_points(&d, &k);
        assert_eq!(pts.get(2, 1), Some(V3::new(0.0, 0.0, 1.0)));
        assert_eq!(pts.get(0, 0), None);
        let n = normals_from_depth(&pts);
        assert_eq!(n.get(0, 0), None);
        assert_eq!(n.get(1, 0), None);
        assert_eq!(n.get(0, 1), None);
        assert!(n.get(2, 1).is_some());
    }

    #[test]
    fn frontoparallel_normals() {
        let (_, n) = plane(9, 7, 1000);
        for v in n.normals.iter() {
            let v = v.unwrap();
            assert!((v - V3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn ambient_only_when_spot_is_off() {
        let (pts, n) = plane(6, 6, 1000);
        let albedo = RasterImage::filled(6, 6, &[200, 100, 0]).unwrap();
        let s = spec(
            0.0,
            0.5,
            PhongMaterial {
                ka: 0.8,
                ..Default::default()
            },
        );
        let out = phong_shade(&albedo, &n, &pts, &s).unwrap();
        let want = [200.0, 100.0, 0.0].map(|c: f64| ((0.4 * c / 255.0).clamp(0.0, 1.0) * 255.0).round() as u8);
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(out.pixel(x, y), &want);
            }
        }
    }

    #[test]
    fn cone_cutoff_matches_ambient() {
        let (pts, n) = plane(40, 40, 1000);
        let albedo = RasterImage::filled(40, 40, &[120, 120, 120]).unwrap();
        let mut s = spec(1.0, 0.3, PhongMaterial::default());
        s.spot.inner_angle = 0.5;
        s.spot.outer_angle = 1.0;
        let lit = phong_shade(&albedo, &n, &pts, &s).unwrap();
        let dark = phong_shade(&albedo, &n, &pts, &spec(0.0, 0.3, PhongMaterial::default())).unwrap();
        assert_eq!(lit.pixel(0, 0), dark.pixel(0, 0));
        assert_ne!(lit.pixel(20, 20), dark.pixel(20, 20));
    }

    #[test]
    fn view_independent_without_specular() {
        let k = CameraIntrinsics::default_for(32, 24);
        let d = DepthImage::from_fn(32, 24, |x, y| 900 + (x * 3 + y * y) as u16).unwrap();
        let pts = depth_to_points(&d, &k);
        let n = normals_from_depth(&pts);
        let albedo = RasterImage::from_fn(32, 24, 3, |x, y| [x as u8 * 7, y as u8 * 9, 77]).unwrap();
        let mut s = spec(
            1.0,
            0.2,
            PhongMaterial {
                ks: 0.0,
                ..Default::default()
            },
        );
        s.spot.position = [0.1, -0.2, 0.0];
        let a = phong_shade(&albedo, &n, &pts, &s).unwrap();
        let b = shade_image(&albedo, &n, &pts, &s, |_| V3::new(0.6, 0.0, 0.8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lighting_sampling() {
        let r = LightingRanges::default();
        assert_eq!(sample_lighting(4, &r).unwrap(), sample_lighting(4, &r).unwrap());
        let fixed = LightingRanges {
            ka: [0.7, 0.7],
            ..Default::default()
        };
        assert_eq!(sample_lighting(9, &fixed).unwrap().material.ka, 0.7);
        let bad = LightingRanges {
            kd: [1.0, 0.5],
            ..Default::default()
        };
        assert!(sample_lighting(0, &bad).is_err());
    }

    #[test]
    fn missing_depth() {
        let scene = ComposedScene {
            image: RasterImage::filled(4, 4, &[1, 1, 1]).unwrap(),
            depth: None,
            placements: vec![],
            annotations: vec![],
            painted: crate::imaging::BinaryMask::new(4, 4).unwrap(),
            background_id: 0,
            seed: 0,
            failures: vec![],
        };
        let k = CameraIntrinsics::default_for(4, 4);
        let r = relight_scene(&scene, &k, &spec(1.0, 1.0, PhongMaterial::default()));
        assert!(matches!(r, Err(Error::MissingDepth)));
    }
}
