//! Procedural scene assembly.
//!
//! Mobile objects are placed along straight parallel lanes with exponential
//! headways; static objects fill roadside bands at jittered regular spacing,
//! with footprint rejection sampling. The output is a [`SceneRecipe`].
//!
//! Everything is laid out in a road frame: `s` runs along lane 0 from its
//! start point, `v` points to the left of it, and the ground is z = 0.

use std::collections::BTreeMap;

use rand::RngExt;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Similarity, Vec3};
use crate::rng::{self, Rng};
use crate::sceneformat::{
    AssetDescription, AssetStore, CameraConfig, ClassLabel, LightingConfig, PlacedObject, Projection,
    SceneRecipe, Shutter, TransformSpec, RECIPE_VERSION,
};

/// Attempts allowed per static object before it is skipped.
pub const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("asset store has no {0} assets but the configuration requests them")]
    NoAssets(ClassLabel),
    #[error("invalid road network: {0}")]
    Road(String),
    #[error("invalid traffic configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lane {
    pub start: Vec3,
    pub end: Vec3,
    pub width: f64,
    /// +1 drives from `start` to `end`, −1 the other way.
    pub direction: i8,
}

/// Strip alongside the roadway, `offset` metres beyond the road edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub offset: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraMount {
    pub lane: usize,
    /// Distance along the lane from its start point, m.
    pub s: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadNetwork {
    pub lanes: Vec<Lane>,
    pub sidewalk: Band,
    pub building_band: Band,
    pub camera_mount: CameraMount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedRange {
    pub min: f64,
    pub max: f64,
}

fn default_speeds() -> BTreeMap<ClassLabel, SpeedRange> {
    BTreeMap::from([
        (ClassLabel::Car, SpeedRange { min: 5.0, max: 15.0 }),
        (ClassLabel::Pedestrian, SpeedRange { min: 0.5, max: 2.0 }),
        (ClassLabel::Cyclist, SpeedRange { min: 3.0, max: 8.0 }),
        (ClassLabel::Other, SpeedRange { min: 5.0, max: 15.0 }),
    ])
}

fn default_mix() -> BTreeMap<ClassLabel, f64> {
    BTreeMap::from([(ClassLabel::Car, 1.0)])
}

fn default_pedestrian_gap() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    /// Vehicles per metre per lane.
    pub vehicle_density: f64,
    /// Pedestrians per metre of sidewalk, each side.
    pub pedestrian_density: f64,
    #[serde(default = "default_speeds")]
    pub speeds: BTreeMap<ClassLabel, SpeedRange>,
    /// Minimum centre-to-centre spacing of vehicles in one lane, m.
    pub min_gap: f64,
    #[serde(default = "default_pedestrian_gap")]
    pub pedestrian_min_gap: f64,
    /// Relative weights of the vehicle classes (car, cyclist, other).
    #[serde(default = "default_mix")]
    pub class_mix: BTreeMap<ClassLabel, f64>,
    /// Per 100 m of road, each side.
    pub buildings_per_100m: f64,
    pub trees_per_100m: f64,
    /// Replaced by a derived seed when run from a pipeline config.
    #[serde(default)]
    pub seed: u64,
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), AssemblyError> {
        let bad = |m: String| Err(AssemblyError::Config(m));
        for (name, v) in [
            ("vehicle_density", self.vehicle_density),
            ("pedestrian_density", self.pedestrian_density),
            ("buildings_per_100m", self.buildings_per_100m),
            ("trees_per_100m", self.trees_per_100m),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !(self.min_gap.is_finite() && self.min_gap > 0.0) {
            return bad(format!("min_gap = {} must be > 0", self.min_gap));
        }
        if !(self.pedestrian_min_gap.is_finite() && self.pedestrian_min_gap > 0.0) {
            return bad(format!("pedestrian_min_gap = {} must be > 0", self.pedestrian_min_gap));
        }
        for (class, r) in &self.speeds {
            if !(r.min.is_finite() && r.max.is_finite() && 0.0 <= r.min && r.min <= r.max) {
                return bad(format!("speed range for {class} must satisfy 0 <= min <= max"));
            }
        }
        for (class, &w) in &self.class_mix {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("class_mix weight for {class} must be >= 0"));
            }
            if !matches!(class, ClassLabel::Car | ClassLabel::Cyclist | ClassLabel::Other) {
                return bad(format!("{class} is not a vehicle class"));
            }
        }
        if self.vehicle_density > 0.0 && self.class_mix.values().sum::<f64>() <= 0.0 {
            return bad("class_mix has no positive weight".into());
        }
        Ok(())
    }

    fn speed_range(&self, class: ClassLabel) -> SpeedRange {
        self.speeds
            .get(&class)
            .copied()
            .or_else(|| default_speeds().get(&class).copied())
            .unwrap_or(SpeedRange { min: 0.0, max: 0.0 })
    }
}

/// Axis-aligned rectangle in road coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub s_min: f64,
    pub s_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Footprint {
    /// Positive-area intersection; touching edges do not count.
    pub fn overlaps(&self, o: &Footprint) -> bool {
        self.s_min < o.s_max && o.s_min < self.s_max && self.v_min < o.v_max && o.v_min < self.v_max
    }

    fn shifted(&self, ds: f64, dv: f64) -> Footprint {
        Footprint {
            s_min: self.s_min + ds,
            s_max: self.s_max + ds,
            v_min: self.v_min + dv,
            v_max: self.v_max + dv,
        }
    }
}

/// Road frame derived from lane 0 plus the lateral extent of the roadway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadFrame {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub s_min: f64,
    pub s_max: f64,
    /// Right and left road edges (v coordinates).
    pub edge_right: f64,
    pub edge_left: f64,
}

impl RoadFrame {
    pub fn to_road(&self, p: Vec3) -> (f64, f64) {
        let d = p - self.origin;
        (d.dot(self.u), d.dot(self.v))
    }

    pub fn to_world(&self, s: f64, v: f64) -> Vec3 {
        self.origin + self.u * s + self.v * v
    }

    /// Lateral interval of a band on one side (`left` = +v).
    pub fn band_interval(&self, band: Band, left: bool) -> (f64, f64) {
        if left {
            (self.edge_left + band.offset, self.edge_left + band.offset + band.width)
        } else {
            (self.edge_right - band.offset - band.width, self.edge_right - band.offset)
        }
    }
}

fn flat(p: Vec3) -> Vec3 {
    Vec3::new(p.x, p.y, 0.0)
}

impl RoadNetwork {
    pub fn frame(&self) -> Result<RoadFrame, AssemblyError> {
        let bad = |m: String| Err(AssemblyError::Road(m));
        let Some(first) = self.lanes.first() else {
            return bad("no lanes".into());
        };
        let origin = flat(first.start);
        let axis = flat(first.end) - origin;
        if axis.length() == 0.0 {
            return bad("lane 0 has zero length".into());
        }
        let u = axis.normalize();
        let v = Vec3::Z.cross(u);
        let mut frame = RoadFrame {
            origin,
            u,
            v,
            s_min: f64::INFINITY,
            s_max: f64::NEG_INFINITY,
            edge_right: f64::INFINITY,
            edge_left: f64::NEG_INFINITY,
        };
        for (i, lane) in self.lanes.iter().enumerate() {
            if !(lane.width.is_finite() && lane.width > 0.0) {
                return bad(format!("lane {i}: width must be > 0"));
            }
            if lane.direction != 1 && lane.direction != -1 {
                return bad(format!("lane {i}: direction must be +1 or -1"));
            }
            let d = flat(lane.end) - flat(lane.start);
            if d.length() == 0.0 {
                return bad(format!("lane {i} has zero length"));
            }
            if d.normalize().cross(u).length() > 1e-9 {
                return bad(format!("lane {i} is not parallel to lane 0"));
            }
            let (s0, v0) = frame.to_road(flat(lane.start));
            let (s1, _) = frame.to_road(flat(lane.end));
            frame.s_min = frame.s_min.min(s0.min(s1));
            frame.s_max = frame.s_max.max(s0.max(s1));
            frame.edge_right = frame.edge_right.min(v0 - lane.width / 2.0);
            frame.edge_left = frame.edge_left.max(v0 + lane.width / 2.0);
        }
        for (name, b) in [("sidewalk", self.sidewalk), ("building_band", self.building_band)] {
            if !(b.offset.is_finite() && b.offset >= 0.0 && b.width.is_finite() && b.width > 0.0) {
                return bad(format!("{name}: offset must be >= 0 and width > 0"));
            }
        }
        let sw = self.sidewalk;
        let bb = self.building_band;
        if bb.offset < sw.offset + sw.width && sw.offset < bb.offset + bb.width {
            return bad("sidewalk and building band overlap".into());
        }
        let m = self.camera_mount;
        let Some(lane) = self.lanes.get(m.lane) else {
            return bad(format!("camera mount lane {} does not exist", m.lane));
        };
        let len = (flat(lane.end) - flat(lane.start)).length();
        if !(0.0..=len).contains(&m.s) || !(m.height.is_finite() && m.height > 0.0) {
            return bad("camera mount must lie on its lane with height > 0".into());
        }
        Ok(frame)
    }

    fn lane_heading(&self, i: usize) -> Vec3 {
        let l = &self.lanes[i];
        (flat(l.end) - flat(l.start)).normalize() * f64::from(l.direction)
    }
}

/// Camera parameters that do not depend on placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSetup {
    pub projection: Projection,
    pub film_width_px: usize,
    pub film_height_px: usize,
    pub exposure_s: f64,
    #[serde(default = "two")]
    pub f_number: f64,
    /// Downward tilt, degrees.
    #[serde(default)]
    pub pitch_deg: f64,
}

fn two() -> f64 {
    2.0
}

/// Static placement result with one log line per skipped object.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StaticPlacement {
    pub objects: Vec<PlacedObject>,
    pub log: Vec<String>,
}

/// Ground-plane footprint of an asset under a placement transform.
pub fn footprint(asset: &AssetDescription, t: &Similarity, frame: &RoadFrame) -> Footprint {
    let mut fp = Footprint {
        s_min: f64::INFINITY,
        s_max: f64::NEG_INFINITY,
        v_min: f64::INFINITY,
        v_max: f64::NEG_INFINITY,
    };
    for c in asset.bounds.corners() {
        let (s, v) = frame.to_road(t.apply_point(c));
        fp.s_min = fp.s_min.min(s);
        fp.s_max = fp.s_max.max(s);
        fp.v_min = fp.v_min.min(v);
        fp.v_max = fp.v_max.max(v);
    }
    fp
}

/// Yaw (degrees) that turns the asset's forward axis onto `heading`.
fn yaw_deg(asset: &AssetDescription, heading: Vec3) -> f64 {
    let f = asset.forward_axis;
    (heading.y.atan2(heading.x) - f.y.atan2(f.x)).to_degrees()
}

fn placement(asset: &AssetDescription, ground: Vec3, heading: Vec3) -> TransformSpec {
    let lift = Vec3::new(0.0, 0.0, -asset.bounds.min.z);
    TransformSpec::yawed(ground + lift, yaw_deg(asset, heading))
}

fn moving(asset: &AssetDescription, instance_id: u32, start: TransformSpec, heading: Vec3, speed: f64, duration: f64) -> PlacedObject {
    let end = match &start {
        TransformSpec::Components {
            translation,
            rotation,
            scale,
        } => TransformSpec::Components {
            translation: *translation + heading * (speed * duration),
            rotation: *rotation,
            scale: *scale,
        },
        m => m.clone(),
    };
    PlacedObject {
        asset_id: asset.asset_id.clone(),
        class_label: asset.class_label,
        instance_id,
        transform_start: start,
        transform_end: end,
        speed,
    }
}

fn pick<'a>(store: &'a AssetStore, class: ClassLabel, rng: &mut Rng) -> Result<&'a AssetDescription, AssemblyError> {
    let candidates = store.of_class(class);
    if candidates.is_empty() {
        return Err(AssemblyError::NoAssets(class));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

fn pick_class(mix: &BTreeMap<ClassLabel, f64>, rng: &mut Rng) -> ClassLabel {
    let total: f64 = mix.values().sum();
    let mut x = rng.random::<f64>() * total;
    let mut last = ClassLabel::Car;
    for (&class, &w) in mix {
        if w <= 0.0 {
            continue;
        }
        last = class;
        if x < w {
            return class;
        }
        x -= w;
    }
    last
}

fn uniform(rng: &mut Rng, r: SpeedRange) -> f64 {
    if r.max > r.min {
        rng.random_range(r.min..r.max)
    } else {
        r.min
    }
}

/// Positions along `[0, length]` with exponential headways of mean
/// `1/density`. The first headway is measured from 0; later headways
/// shorter than `min_gap` are rejected, which by memorylessness is
/// `min_gap` plus a fresh exponential draw.
fn headway_positions(rng: &mut Rng, density: f64, min_gap: f64, length: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if density <= 0.0 {
        return out;
    }
    let exp = Exp::new(density).expect("density is positive");
    let mut x = exp.sample(rng);
    while x <= length {
        out.push(x);
        x += min_gap + exp.sample(rng);
    }
    out
}

/// Places vehicles on every lane and pedestrians on both sidewalks.
/// Objects advance `speed × shutter_duration` along their heading between
/// the two transforms. Instance ids are 1.. in placement order.
pub fn place_traffic(
    road: &RoadNetwork,
    cfg: &TrafficConfig,
    store: &AssetStore,
    shutter_duration: f64,
) -> Result<Vec<PlacedObject>, AssemblyError> {
    cfg.validate()?;
    let frame = road.frame()?;
    let mut out = Vec::new();
    let next_id = |out: &Vec<PlacedObject>| out.len() as u32 + 1;

    if cfg.vehicle_density > 0.0 {
        for class in cfg.class_mix.iter().filter(|(_, &w)| w > 0.0).map(|(c, _)| *c) {
            if store.of_class(class).is_empty() {
                return Err(AssemblyError::NoAssets(class));
            }
        }
    }
    for (i, lane) in road.lanes.iter().enumerate() {
        let mut rng = rng::stream(cfg.seed, &[rng::key("traffic/lane"), i as u64]);
        let start = flat(lane.start);
        let along = flat(lane.end) - start;
        let len = along.length();
        let dir = along.normalize();
        let heading = road.lane_heading(i);
        for x in headway_positions(&mut rng, cfg.vehicle_density, cfg.min_gap, len) {
            let class = pick_class(&cfg.class_mix, &mut rng);
            let asset = pick(store, class, &mut rng)?;
            let speed = uniform(&mut rng, cfg.speed_range(class));
            let m = road.camera_mount;
            if m.lane == i && (x - m.s).abs() < cfg.min_gap {
                continue;
            }
            let t = placement(asset, start + dir * x, heading);
            out.push(moving(asset, next_id(&out), t, heading, speed, shutter_duration));
        }
    }

    if cfg.pedestrian_density > 0.0 {
        let length = frame.s_max - frame.s_min;
        for (side, left) in [(0u64, true), (1, false)] {
            let mut rng = rng::stream(cfg.seed, &[rng::key("traffic/sidewalk"), side]);
            let (v0, v1) = frame.band_interval(road.sidewalk, left);
            for x in headway_positions(&mut rng, cfg.pedestrian_density, cfg.pedestrian_min_gap, length) {
                let asset = pick(store, ClassLabel::Pedestrian, &mut rng)?;
                let speed = uniform(&mut rng, cfg.speed_range(ClassLabel::Pedestrian));
                let v = rng.random_range(v0..v1);
                let heading = if rng.random::<bool>() { frame.u } else { -frame.u };
                let t = placement(asset, frame.to_world(frame.s_min + x, v), heading);
                out.push(moving(asset, next_id(&out), t, heading, speed, shutter_duration));
            }
        }
    }
    Ok(out)
}

struct Slot {
    class: ClassLabel,
    left: bool,
    nominal_s: f64,
    band: Band,
    centred: bool,
}

/// Places buildings in the building band and trees on the sidewalks, at
/// jittered regular spacing, skipping objects whose footprint cannot be
/// placed without overlap in [`PLACEMENT_ATTEMPTS`] tries.
pub fn place_static(road: &RoadNetwork, cfg: &TrafficConfig, store: &AssetStore) -> Result<StaticPlacement, AssemblyError> {
    cfg.validate()?;
    let frame = road.frame()?;
    let length = frame.s_max - frame.s_min;
    let mut rng = rng::stream(cfg.seed, &[rng::key("static")]);

    let mut slots = Vec::new();
    for (class, per_100m, band, centred) in [
        (ClassLabel::Building, cfg.buildings_per_100m, road.building_band, true),
        (ClassLabel::Tree, cfg.trees_per_100m, road.sidewalk, false),
    ] {
        let n = (length * per_100m / 100.0).round() as usize;
        if n > 0 && store.of_class(class).is_empty() {
            return Err(AssemblyError::NoAssets(class));
        }
        let spacing = length / n.max(1) as f64;
        for left in [true, false] {
            for k in 0..n {
                let jitter = rng.random_range(-0.25..0.25) * spacing;
                slots.push(Slot {
                    class,
                    left,
                    nominal_s: frame.s_min + (k as f64 + 0.5) * spacing + jitter,
                    band,
                    centred,
                });
            }
        }
    }

    let mut result = StaticPlacement::default();
    let mut placed: Vec<Footprint> = Vec::new();
    for slot in slots {
        let asset = pick(store, slot.class, &mut rng)?;
        let heading = if slot.left { -frame.u } else { frame.u };
        let yaw = yaw_deg(asset, heading);
        let lift = Vec3::new(0.0, 0.0, -asset.bounds.min.z);
        let at = |s: f64, v: f64| TransformSpec::yawed(frame.to_world(s, v) + lift, yaw);
        let local = footprint(
            asset,
            &at(0.0, 0.0).to_similarity().expect("yaw transform is valid"),
            &frame,
        );
        let (b0, b1) = frame.band_interval(slot.band, slot.left);
        let (s_lo, s_hi) = (frame.s_min - local.s_min, frame.s_max - local.s_max);
        let (v_lo, v_hi) = (b0 - local.v_min, b1 - local.v_max);
        let side = if slot.left { "left" } else { "right" };
        if s_lo > s_hi {
            result.log.push(format!(
                "skipped {} {} side={side}: footprint longer than the road",
                slot.class, asset.asset_id
            ));
            continue;
        }
        let v_mid = (b0 + b1) / 2.0 - (local.v_min + local.v_max) / 2.0;
        let mut found = None;
        for attempt in 0..PLACEMENT_ATTEMPTS {
            let s = if attempt == 0 {
                slot.nominal_s.clamp(s_lo, s_hi)
            } else if s_hi > s_lo {
                rng.random_range(s_lo..s_hi)
            } else {
                s_lo
            };
            let v = if slot.centred || v_lo >= v_hi {
                v_mid
            } else {
                rng.random_range(v_lo..v_hi)
            };
            let fp = local.shifted(s, v);
            if placed.iter().all(|p| !p.overlaps(&fp)) {
                found = Some((s, v, fp));
                break;
            }
        }
        match found {
            Some((s, v, fp)) => {
                placed.push(fp);
                let t = at(s, v);
                result.objects.push(PlacedObject {
                    asset_id: asset.asset_id.clone(),
                    class_label: asset.class_label,
                    instance_id: result.objects.len() as u32 + 1,
                    transform_start: t.clone(),
                    transform_end: t,
                    speed: 0.0,
                });
            }
            None => result.log.push(format!(
                "skipped {} {} side={side} near s={:.2}: no free footprint after {PLACEMENT_ATTEMPTS} attempts",
                slot.class, asset.asset_id, slot.nominal_s
            )),
        }
    }
    Ok(result)
}

/// Camera at the ego mount looking along its lane.
pub fn mount_camera(road: &RoadNetwork, setup: &CameraSetup) -> Result<CameraConfig, AssemblyError> {
    road.frame()?;
    let m = road.camera_mount;
    let lane = &road.lanes[m.lane];
    let dir = (flat(lane.end) - flat(lane.start)).normalize();
    let position = flat(lane.start) + dir * m.s + Vec3::Z * m.height;
    let heading = road.lane_heading(m.lane);
    let pitch = setup.pitch_deg.to_radians();
    let look = heading * pitch.cos() - Vec3::Z * pitch.sin();
    Ok(CameraConfig {
        position,
        look_at: position + look * 10.0,
        up: Vec3::Z,
        projection: setup.projection.clone(),
        film_width_px: setup.film_width_px,
        film_height_px: setup.film_height_px,
        exposure_s: setup.exposure_s,
        f_number: setup.f_number,
    })
}

/// Full scene: traffic, then static objects, numbered 1.. in that order.
pub fn assemble_recipe(
    road: &RoadNetwork,
    cfg: &TrafficConfig,
    store: &AssetStore,
    camera: &CameraSetup,
    lighting: &LightingConfig,
    shutter: Shutter,
    asset_store_path: &str,
) -> Result<(SceneRecipe, Vec<String>), AssemblyError> {
    if !(shutter.open.is_finite() && shutter.close.is_finite() && shutter.open < shutter.close) {
        return Err(AssemblyError::Config("shutter open must precede close".into()));
    }
    let mut objects = place_traffic(road, cfg, store, shutter.duration())?;
    let statics = place_static(road, cfg, store)?;
    objects.extend(statics.objects);
    for (i, o) in objects.iter_mut().enumerate() {
        o.instance_id = i as u32 + 1;
    }
    let recipe = SceneRecipe {
        recipe_version: RECIPE_VERSION.to_string(),
        seed: cfg.seed,
        asset_store_path: asset_store_path.to_string(),
        camera: mount_camera(road, camera)?,
        lighting: lighting.clone(),
        shutter,
        objects,
    };
    Ok((recipe, statics.log))
}
