//! Flat-shaded software rasterizer for the 64×64 observation.
//!
//! Everything is computed in image coordinates centered on the principal
//! point so that mirrored camera poses produce exactly mirrored frames.

use std::io::Write;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{arm_pose, ArmGeometry, JointVector};

pub const FRAME_WIDTH: usize = 64;
pub const FRAME_HEIGHT: usize = 64;
pub const FRAME_CHANNELS: usize = 3;
pub const FRAME_BYTES: usize = FRAME_WIDTH * FRAME_HEIGHT * FRAME_CHANNELS;

pub const CAMERA_RADIUS_M: f64 = 2.0;
pub const TARGET_EDGE_M: f64 = 0.03;
/// Look-at point: the robot base raised to the axis-2 height.
pub const DEFAULT_ANCHOR: [f64; 3] = [0.0, 0.0, 0.29];

const BACKGROUND: [u8; 3] = [28, 30, 40];
const FLOOR: [u8; 3] = [150, 156, 128];
const TARGET: [u8; 3] = [220, 24, 24];
const SHADOW_FACTOR: f64 = 0.5;
const NEAR_PLANE: f64 = 0.05;
const FLOOR_HALF_EXTENT: f64 = 1.0;

/// Link radius and color, base to tip.
const LINK_STYLE: [(f64, [u8; 3]); 5] = [
    (0.070, [88, 92, 104]),
    (0.050, [214, 214, 222]),
    (0.045, [176, 178, 190]),
    (0.040, [214, 214, 222]),
    (0.030, [60, 60, 66]),
];

/// Camera on a sphere around the look-at anchor.
///
/// `forward` is the viewing direction: an azimuth of 180° with a negative
/// elevation looks down at the robot from the +x side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub anchor: Point3<f64>,
    pub position: Point3<f64>,
    pub forward: Vector3<f64>,
    pub right: Vector3<f64>,
    pub up: Vector3<f64>,
}

impl CameraPose {
    pub fn look_at(
        azimuth_deg: f64,
        elevation_deg: f64,
        radius: f64,
        anchor: Point3<f64>,
    ) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidRadius(radius));
        }
        if !azimuth_deg.is_finite() || !elevation_deg.is_finite() {
            return Err(Error::InvalidConfig("camera angles must be finite".into()));
        }
        if elevation_deg.abs() >= 90.0 {
            return Err(Error::InvalidConfig(
                "camera elevation must lie strictly between -90° and 90°".into(),
            ));
        }
        // Measured from 180° so that azimuths mirrored about the nominal
        // view give bit-exact mirrored directions.
        let rel = (azimuth_deg - 180.0).to_radians();
        let el = elevation_deg.to_radians();
        let (sr, cr) = rel.sin_cos();
        let (se, ce) = el.sin_cos();
        let forward = Vector3::new(-cr * ce, -sr * ce, se);
        let position = anchor - forward * radius;
        let horiz = forward.x.hypot(forward.y);
        let right = Vector3::new(forward.y / horiz, -forward.x / horiz, 0.0);
        let up = right.cross(&forward);
        Ok(CameraPose {
            azimuth_deg,
            elevation_deg,
            radius,
            anchor,
            position,
            forward,
            right,
            up,
        })
    }

    /// Camera-frame coordinates `(right, up, depth)` of a world point.
    fn to_camera(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        let rel = p - self.position;
        (rel.dot(&self.right), rel.dot(&self.up), rel.dot(&self.forward))
    }
}

pub fn camera_from_angles(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Result<CameraPose> {
    CameraPose::look_at(
        azimuth_deg,
        elevation_deg,
        radius,
        Point3::from(DEFAULT_ANCHOR),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub fov_y_deg: f64,
    /// Smallest on-screen side of the target marker, in pixels. The 3 cm
    /// cube covers roughly one pixel at 2 m, which a stride-4 convolution
    /// can miss entirely.
    pub target_min_px: f64,
    /// Direction the light travels, world frame.
    pub light_dir: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            fov_y_deg: 45.0,
            target_min_px: 4.0,
            light_dir: [0.3, 0.0, -1.0],
        }
    }
}

impl RenderOptions {
    pub fn focal_px(&self) -> f64 {
        (FRAME_HEIGHT as f64 / 2.0) / (self.fov_y_deg.to_radians() / 2.0).tan()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 170.0) {
            return Err(Error::InvalidConfig("fov_y_deg must be in (0, 170)".into()));
        }
        if !(self.target_min_px >= 0.0) {
            return Err(Error::InvalidConfig("target_min_px must be >= 0".into()));
        }
        if !(self.light_dir[2] < 0.0) {
            return Err(Error::InvalidConfig(
                "light_dir must point downward (negative z)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneState {
    pub joints: JointVector,
    pub target_xy: [f64; 2],
    pub target_size: f64,
    pub shadow_enabled: bool,
}

impl SceneState {
    pub fn new(joints: JointVector, target_xy: [f64; 2]) -> Self {
        SceneState {
            joints,
            target_xy,
            target_size: TARGET_EDGE_M,
            shadow_enabled: true,
        }
    }

    /// Cube center; the cube rests on the floor.
    pub fn target_center(&self) -> Point3<f64> {
        Point3::new(self.target_xy[0], self.target_xy[1], self.target_size / 2.0)
    }
}

/// A 64×64 RGB frame, row-major, 8 bits per channel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FrameRGB {
    data: Vec<u8>,
}

impl std::fmt::Debug for FrameRGB {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FrameRGB({}×{})", FRAME_WIDTH, FRAME_HEIGHT)
    }
}

impl Default for FrameRGB {
    fn default() -> Self {
        FrameRGB {
            data: vec![0; FRAME_BYTES],
        }
    }
}

impl FrameRGB {
    pub fn from_bytes(data: Vec<u8>) -> Result<Self> {
        if data.len() != FRAME_BYTES {
            return Err(Error::Shape(format!(
                "frame must hold {FRAME_BYTES} bytes, got {}",
                data.len()
            )));
        }
        Ok(FrameRGB { data })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * FRAME_WIDTH + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * FRAME_WIDTH + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn mirrored_horizontally(&self) -> FrameRGB {
        let mut out = FrameRGB::default();
        for y in 0..FRAME_HEIGHT {
            for x in 0..FRAME_WIDTH {
                out.put(FRAME_WIDTH - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    /// Channel-major planes scaled to [0, 1].
    pub fn to_chw<T: num_traits::Float>(&self) -> Vec<T> {
        let plane = FRAME_WIDTH * FRAME_HEIGHT;
        let mut out = vec![T::zero(); FRAME_BYTES];
        let scale = T::from(1.0 / 255.0).unwrap();
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = T::from(px[c]).unwrap() * scale;
            }
        }
        out
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{FRAME_WIDTH} {FRAME_HEIGHT}\n255\n").into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

pub fn is_red(px: [u8; 3]) -> bool {
    px[0] >= 150 && px[1] <= 80 && px[2] <= 80
}

/// Centered image coordinate of pixel index `i`.
#[inline]
fn pixel_center(i: usize) -> f64 {
    i as f64 + 0.5 - (FRAME_WIDTH as f64) / 2.0
}

enum Primitive {
    Capsule {
        a: (f64, f64),
        b: (f64, f64),
        ra: f64,
        rb: f64,
        color: [u8; 3],
    },
    Cube {
        faces: Vec<[(f64, f64); 4]>,
        center: (f64, f64),
        min_half: f64,
    },
}

/// Stateless renderer bound to an arm geometry and render options.
#[derive(Clone, Debug, Default)]
pub struct Renderer {
    pub geometry: ArmGeometry,
    pub options: RenderOptions,
}

impl Renderer {
    pub fn new(geometry: ArmGeometry, options: RenderOptions) -> Self {
        Renderer { geometry, options }
    }

    /// Pinhole projection to pixel coordinates `(u, v)`, origin at the
    /// top-left corner, `v` growing downward.
    pub fn project_point(&self, cam: &CameraPose, p: &Point3<f64>) -> Result<(f64, f64)> {
        let (x, y, z) = self.project_centered(cam, p)?;
        let _ = z;
        Ok((x + FRAME_WIDTH as f64 / 2.0, y + FRAME_HEIGHT as f64 / 2.0))
    }

    /// Centered image coordinates plus depth.
    fn project_centered(&self, cam: &CameraPose, p: &Point3<f64>) -> Result<(f64, f64, f64)> {
        let (x, y, depth) = cam.to_camera(p);
        if depth <= NEAR_PLANE {
            return Err(Error::BehindCamera(depth));
        }
        let f = self.options.focal_px();
        Ok((f * x / depth, -(f * y / depth), depth))
    }

    pub fn render(&self, scene: &SceneState, cam: &CameraPose) -> FrameRGB {
        let mut frame = FrameRGB::default();
        self.render_into(scene, cam, &mut frame);
        frame
    }

    pub fn render_into(&self, scene: &SceneState, cam: &CameraPose, frame: &mut FrameRGB) {
        let pose = arm_pose(&scene.joints, &self.geometry);
        let segments = pose.segments();
        let f = self.options.focal_px();

        let light = Vector3::from(self.options.light_dir).normalize();
        let shadows: Vec<((f64, f64), (f64, f64), f64)> = if scene.shadow_enabled {
            segments
                .iter()
                .zip(LINK_STYLE.iter())
                .filter_map(|((a, b), (r, _))| {
                    floor_shadow(a, b, &light).map(|(p, q)| (p, q, *r))
                })
                .collect()
        } else {
            Vec::new()
        };

        // Background, floor and shadow, per pixel.
        for py in 0..FRAME_HEIGHT {
            let cy = pixel_center(py);
            for px in 0..FRAME_WIDTH {
                let cx = pixel_center(px);
                let dir = cam.forward + cam.right * (cx / f) - cam.up * (cy / f);
                let mut color = BACKGROUND;
                if dir.z < 0.0 {
                    let t = -cam.position.z / dir.z;
                    let hx = cam.position.x + t * dir.x;
                    let hy = cam.position.y + t * dir.y;
                    if hx.abs() <= FLOOR_HALF_EXTENT && hy.abs() <= FLOOR_HALF_EXTENT {
                        color = FLOOR;
                        let shaded = shadows
                            .iter()
                            .any(|(a, b, r)| segment_distance((hx, hy), *a, *b).0 <= *r);
                        if shaded {
                            color = color.map(|c| (c as f64 * SHADOW_FACTOR) as u8);
                        }
                    }
                }
                frame.put(px, py, color);
            }
        }

        // Arm links and target, far to near.
        let mut prims: Vec<(f64, Primitive)> = Vec::with_capacity(6);
        for ((a, b), (radius, color)) in segments.iter().zip(LINK_STYLE.iter()) {
            if let Some((pa, pb)) = self.project_segment(cam, a, b) {
                let depth = 0.5 * (pa.2 + pb.2);
                prims.push((
                    depth,
                    Primitive::Capsule {
                        a: (pa.0, pa.1),
                        b: (pb.0, pb.1),
                        ra: f * radius / pa.2,
                        rb: f * radius / pb.2,
                        color: *color,
                    },
                ));
            }
        }
        if let Some((depth, cube)) = self.project_cube(cam, scene) {
            prims.push((depth, cube));
        }
        prims.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (_, prim) in &prims {
            draw_primitive(frame, prim);
        }
    }

    /// Projects a segment after clipping it to the near plane.
    fn project_segment(
        &self,
        cam: &CameraPose,
        a: &Point3<f64>,
        b: &Point3<f64>,
    ) -> Option<((f64, f64, f64), (f64, f64, f64))> {
        let da = cam.to_camera(a).2;
        let db = cam.to_camera(b).2;
        if da <= NEAR_PLANE && db <= NEAR_PLANE {
            return None;
        }
        let clip = |p: &Point3<f64>, q: &Point3<f64>, dp: f64, dq: f64| {
            let t = (NEAR_PLANE * 1.01 - dp) / (dq - dp);
            p + (q - p) * t
        };
        let (a, b) = if da <= NEAR_PLANE {
            (clip(a, b, da, db), *b)
        } else if db <= NEAR_PLANE {
            (*a, clip(b, a, db, da))
        } else {
            (*a, *b)
        };
        let pa = self.project_centered(cam, &a).ok()?;
        let pb = self.project_centered(cam, &b).ok()?;
        Some((pa, pb))
    }

    fn project_cube(&self, cam: &CameraPose, scene: &SceneState) -> Option<(f64, Primitive)> {
        let c = scene.target_center();
        let h = scene.target_size / 2.0;
        let mut corners = [(0.0, 0.0); 8];
        for (i, corner) in corners.iter_mut().enumerate() {
            let p = Point3::new(
                c.x + if i & 1 == 0 { -h } else { h },
                c.y + if i & 2 == 0 { -h } else { h },
                c.z + if i & 4 == 0 { -h } else { h },
            );
            let (x, y, _) = self.project_centered(cam, &p).ok()?;
            *corner = (x, y);
        }
        let (cx, cy, depth) = self.project_centered(cam, &c).ok()?;
        const FACES: [[usize; 4]; 6] = [
            [0, 1, 3, 2],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 3, 7, 6],
            [0, 2, 6, 4],
            [1, 3, 7, 5],
        ];
        let faces = FACES
            .iter()
            .map(|f| [corners[f[0]], corners[f[1]], corners[f[2]], corners[f[3]]])
            .collect();
        Some((
            depth,
            Primitive::Cube {
                faces,
                center: (cx, cy),
                min_half: self.options.target_min_px / 2.0,
            },
        ))
    }
}

/// Shadow of a segment on the floor plane, clipped to its part above the
/// floor.
fn floor_shadow(
    a: &Point3<f64>,
    b: &Point3<f64>,
    light: &Vector3<f64>,
) -> Option<((f64, f64), (f64, f64))> {
    let (mut a, mut b) = (*a, *b);
    if a.z < 0.0 && b.z < 0.0 {
        return None;
    }
    if a.z < 0.0 {
        a = a + (b - a) * (-a.z / (b.z - a.z));
    } else if b.z < 0.0 {
        b = b + (a - b) * (-b.z / (a.z - b.z));
    }
    let drop = |p: &Point3<f64>| {
        let t = -p.z / light.z;
        (p.x + t * light.x, p.y + t * light.y)
    };
    Some((drop(&a), drop(&b)))
}

/// Distance from `p` to segment `ab` and the clamped segment parameter.
#[inline]
fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = apx - t * abx;
    let dy = apy - t * aby;
    ((dx * dx + dy * dy).sqrt(), t)
}

fn pixel_range(lo: f64, hi: f64, size: usize) -> std::ops::Range<usize> {
    let half = size as f64 / 2.0;
    let start = (lo + half - 0.5).ceil().max(0.0);
    let end = (hi + half - 0.5).floor() + 1.0;
    let end = end.min(size as f64);
    if end <= start {
        0..0
    } else {
        start as usize..end as usize
    }
}

fn inside_quad(p: (f64, f64), q: &[(f64, f64); 4]) -> bool {
    let mut pos = false;
    let mut neg = false;
    for i in 0..4 {
        let a = q[i];
        let b = q[(i + 1) % 4];
        let e = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if e > 0.0 {
            pos = true;
        } else if e < 0.0 {
            neg = true;
        }
    }
    !(pos && neg)
}

fn draw_primitive(frame: &mut FrameRGB, prim: &Primitive) {
    match prim {
        Primitive::Capsule {
            a,
            b,
            ra,
            rb,
            color,
        } => {
            let rmax = ra.max(*rb);
            let xs = pixel_range(a.0.min(b.0) - rmax, a.0.max(b.0) + rmax, FRAME_WIDTH);
            let ys = pixel_range(a.1.min(b.1) - rmax, a.1.max(b.1) + rmax, FRAME_HEIGHT);
            for py in ys {
                let cy = pixel_center(py);
                for px in xs.clone() {
                    let cx = pixel_center(px);
                    let (d, t) = segment_distance((cx, cy), *a, *b);
                    if d <= ra + (rb - ra) * t {
                        frame.put(px, py, *color);
                    }
                }
            }
        }
        Primitive::Cube {
            faces,
            center,
            min_half,
        } => {
            let mut lo = (center.0 - min_half, center.1 - min_half);
            let mut hi = (center.0 + min_half, center.1 + min_half);
            for q in faces {
                for p in q {
                    lo = (lo.0.min(p.0), lo.1.min(p.1));
                    hi = (hi.0.max(p.0), hi.1.max(p.1));
                }
            }
            for py in pixel_range(lo.1, hi.1, FRAME_HEIGHT) {
                let cy = pixel_center(py);
                for px in pixel_range(lo.0, hi.0, FRAME_WIDTH) {
                    let cx = pixel_center(px);
                    let in_marker = (cx - center.0).abs() <= *min_half
                        && (cy - center.1).abs() <= *min_half;
                    if in_marker || faces.iter().any(|q| inside_quad((cx, cy), q)) {
                        frame.put(px, py, TARGET);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn renderer() -> Renderer {
        Renderer::default()
    }

    #[test]
    fn nominal_pose_sits_above_the_front_of_the_robot() {
        let cam = camera_from_angles(180.0, -30.0, 2.0).unwrap();
        assert!((cam.position.x - 2.0 * 30f64.to_radians().cos()).abs() < 1e-12);
        assert!(cam.position.y.abs() < 1e-12);
        assert!((cam.position.z - (0.29 + 1.0)).abs() < 1e-12);
        let again = camera_from_angles(180.0, -30.0, 2.0).unwrap();
        assert_eq!(cam, again);
    }

    #[test]
    fn mirrored_azimuths_mirror_the_camera() {
        let a = camera_from_angles(140.0, -50.0, 2.0).unwrap();
        let b = camera_from_angles(220.0, -50.0, 2.0).unwrap();
        // y → −y across the vertical x–z mid-plane
        assert_eq!(a.position.x, b.position.x);
        assert_eq!(a.position.y, -b.position.y);
        assert_eq!(a.position.z, b.position.z);
        // oracle: plain spherical coordinates
        for cam in [a, b] {
            let az = cam.azimuth_deg.to_radians();
            let el = cam.elevation_deg.to_radians();
            let expect = [
                -2.0 * el.cos() * az.cos(),
                -2.0 * el.cos() * az.sin(),
                0.29 - 2.0 * el.sin(),
            ];
            for k in 0..3 {
                assert!((cam.position[k] - expect[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_positive_radius_rejected() {
        assert!(matches!(
            camera_from_angles(180.0, -30.0, 0.0),
            Err(Error::InvalidRadius(_))
        ));
        assert!(camera_from_angles(180.0, -30.0, -1.0).is_err());
    }

    #[test]
    fn anchor_projects_to_image_center() {
        let r = renderer();
        for (az, el) in [(180.0, -30.0), (140.0, -50.0), (215.0, -10.0)] {
            let cam = camera_from_angles(az, el, 2.0).unwrap();
            let (u, v) = r.project_point(&cam, &cam.anchor).unwrap();
            assert!((u - 32.0).abs() <= 0.5 && (v - 32.0).abs() <= 0.5);
            assert_eq!(
                r.project_point(&cam, &cam.anchor).unwrap(),
                r.project_point(&cam, &cam.anchor).unwrap()
            );
        }
    }

    #[test]
    fn higher_point_projects_higher() {
        let r = renderer();
        let cam = camera_from_angles(180.0, -30.0, 2.0).unwrap();
        let p = cam.anchor + Vector3::new(0.0, 0.0, 0.1);
        let (_, v) = r.project_point(&cam, &p).unwrap();
        assert!(v < 32.0);
    }

    #[test]
    fn point_behind_camera_rejected() {
        let r = renderer();
        let cam = camera_from_angles(180.0, -30.0, 2.0).unwrap();
        let behind = cam.position - cam.forward * 0.5;
        assert!(matches!(
            r.project_point(&cam, &behind),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn frame_is_fully_written_and_deterministic() {
        let r = renderer();
        let cam = camera_from_angles(180.0, -30.0, 2.0).unwrap();
        let scene = SceneState::new(JointVector::new([20.0, 10.0, -30.0, 0.0, 40.0, 0.0]), [0.3, 0.1]);
        let mut stale = FrameRGB::from_bytes(vec![7; FRAME_BYTES]).unwrap();
        r.render_into(&scene, &cam, &mut stale);
        let fresh = r.render(&scene, &cam);
        assert_eq!(stale, fresh);
        assert_eq!(fresh.as_bytes().len(), 12_288);
    }

    #[test]
    fn target_on_optical_axis_lands_at_center() {
        let r = Renderer::new(
            ArmGeometry::default(),
            RenderOptions {
                target_min_px: 0.0,
                ..RenderOptions::default()
            },
        );
        // camera aimed straight at the cube center
        let zc = TARGET_EDGE_M / 2.0;
        let cam = CameraPose::look_at(180.0, -30.0, 2.0, Point3::new(0.3, -0.1, zc)).unwrap();
        // arm swung out of the line of sight
        let scene = SceneState::new(JointVector::new([90.0, 0.0, 0.0, 0.0, 0.0, 0.0]), [0.3, -0.1]);
        let (u, v) = r.project_point(&cam, &scene.target_center()).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 32.0).abs() < 1e-9);
        let frame = r.render(&scene, &cam);
        let mut red = 0;
        for y in 0..FRAME_HEIGHT {
            for x in 0..FRAME_WIDTH {
                if is_red(frame.pixel(x, y)) {
                    red += 1;
                    assert!((x as f64 + 0.5 - 32.0).abs() <= 2.0, "x={x}");
                    assert!((y as f64 + 0.5 - 32.0).abs() <= 2.0, "y={y}");
                }
            }
        }
        assert!(red > 0);
    }

    #[test]
    fn shadow_only_touches_floor_pixels() {
        let r = renderer();
        let cam = camera_from_angles(180.0, -30.0, 2.0).unwrap();
        let mut scene = SceneState::new(JointVector::new([30.0, 40.0, -20.0, 0.0, 30.0, 0.0]), [0.3, -0.2]);
        scene.shadow_enabled = false;
        let off = r.render(&scene, &cam);
        scene.shadow_enabled = true;
        let on = r.render(&scene, &cam);
        let mut changed = 0;
        for y in 0..FRAME_HEIGHT {
            for x in 0..FRAME_WIDTH {
                if off.pixel(x, y) != on.pixel(x, y) {
                    changed += 1;
                    assert_eq!(off.pixel(x, y), FLOOR, "({x},{y}) is not floor");
                }
            }
        }
        assert!(changed > 0, "shadow not visible");
    }

    #[test]
    fn azimuth_mirror_symmetry() {
        let r = renderer();
        // symmetric about the x–z plane
        let scene = SceneState::new(JointVector::new([0.0, 25.0, -30.0, 0.0, 45.0, 0.0]), [0.3, 0.0]);
        for delta in [5.0, 20.0, 40.0] {
            let a = r.render(&scene, &camera_from_angles(180.0 + delta, -30.0, 2.0).unwrap());
            let b = r.render(&scene, &camera_from_angles(180.0 - delta, -30.0, 2.0).unwrap());
            assert_eq!(a, b.mirrored_horizontally(), "delta {delta}");
        }
    }

    #[test]
    fn visible_target_always_has_red_pixels() {
        use rand::{Rng, SeedableRng};
        let r = Renderer::new(
            ArmGeometry::default(),
            RenderOptions {
                target_min_px: 0.0,
                ..RenderOptions::default()
            },
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let cam = camera_from_angles(rng.gen_range(140.0..220.0), rng.gen_range(-50.0..-10.0), 2.0).unwrap();
            // arm folded away behind the base so it cannot occlude
            let scene = SceneState::new(
                JointVector::new([165.0, -60.0, 0.0, 0.0, 0.0, 0.0]),
                [rng.gen_range(0.2..0.4), rng.gen_range(-0.3..0.3)],
            );
            let c = scene.target_center();
            let h = scene.target_size / 2.0;
            let in_frustum = (0..8).all(|i| {
                let p = Point3::new(
                    c.x + if i & 1 == 0 { -h } else { h },
                    c.y + if i & 2 == 0 { -h } else { h },
                    c.z + if i & 4 == 0 { -h } else { h },
                );
                r.project_point(&cam, &p)
                    .map(|(u, v)| (0.0..64.0).contains(&u) && (0.0..64.0).contains(&v))
                    .unwrap_or(false)
            });
            if !in_frustum {
                continue;
            }
            let frame = r.render(&scene, &cam);
            let red = (0..FRAME_HEIGHT)
                .flat_map(|y| (0..FRAME_WIDTH).map(move |x| (x, y)))
                .filter(|&(x, y)| is_red(frame.pixel(x, y)))
                .count();
            assert!(red >= 1);
        }
    }

    #[test]
    fn ppm_header() {
        let f = FrameRGB::default();
        let ppm = f.to_ppm();
        assert!(ppm.starts_with(b"P6\n64 64\n255\n"));
        assert_eq!(ppm.len(), 13 + FRAME_BYTES);
    }
}
