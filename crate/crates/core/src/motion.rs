//! Keypoint sequences, root/local decomposition, masking and
//! human-object concatenation.
//!
//! All 2D containers store coordinates row-major as `T x K` pixel pairs.
//! Visibility is kept next to the coordinates instead of being encoded with
//! sentinel values: a dropped keypoint keeps its last coordinates and is
//! simply skipped by every loss and metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A `T x K` trajectory of 2D joints in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSeq2D {
    frames: usize,
    joints: usize,
    coords: Vec<[f64; 2]>,
    visibility: Vec<bool>,
}

impl KeypointSeq2D {
    /// Builds a fully visible sequence.
    pub fn new(frames: usize, joints: usize, coords: Vec<[f64; 2]>) -> Result<Self> {
        let visibility = vec![true; coords.len()];
        Self::with_visibility(frames, joints, coords, visibility)
    }

    pub fn with_visibility(
        frames: usize,
        joints: usize,
        coords: Vec<[f64; 2]>,
        visibility: Vec<bool>,
    ) -> Result<Self> {
        if frames < 1 {
            return Err(Error::shape("keypoint sequence needs at least one frame"));
        }
        if joints < 2 {
            return Err(Error::shape("keypoint sequence needs at least two joints"));
        }
        Self::checked(frames, joints, coords, visibility)
    }

    /// Like [`with_visibility`](Self::with_visibility) but allows a single
    /// joint; object tracks with `M = 1` go through here.
    fn checked(
        frames: usize,
        joints: usize,
        coords: Vec<[f64; 2]>,
        visibility: Vec<bool>,
    ) -> Result<Self> {
        if coords.len() != frames * joints || visibility.len() != frames * joints {
            return Err(Error::shape(format!(
                "expected {} entries for {frames}x{joints}, got {} coords / {} flags",
                frames * joints,
                coords.len(),
                visibility.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("keypoint coordinates must be finite"));
        }
        Ok(Self {
            frames,
            joints,
            coords,
            visibility,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    #[inline]
    pub fn index(&self, t: usize, k: usize) -> usize {
        t * self.joints + k
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize) -> [f64; 2] {
        self.coords[self.index(t, k)]
    }

    #[inline]
    pub fn is_visible(&self, t: usize, k: usize) -> bool {
        self.visibility[self.index(t, k)]
    }

    pub fn frame(&self, t: usize) -> &[[f64; 2]] {
        &self.coords[t * self.joints..(t + 1) * self.joints]
    }

    /// Replaces the visibility flags, keeping coordinates.
    pub fn set_visibility(&mut self, visibility: Vec<bool>) -> Result<()> {
        if visibility.len() != self.coords.len() {
            return Err(Error::shape("visibility length does not match sequence"));
        }
        self.visibility = visibility;
        Ok(())
    }

    /// Overwrites the coordinates, rejecting non-finite values.
    pub fn set_coords(&mut self, coords: Vec<[f64; 2]>) -> Result<()> {
        if coords.len() != self.coords.len() {
            return Err(Error::shape("coordinate length does not match sequence"));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite keypoint coordinate".into()));
        }
        self.coords = coords;
        Ok(())
    }

    /// Returns a copy translated by `offset` in every frame.
    pub fn translated(&self, offset: [f64; 2]) -> Self {
        let mut out = self.clone();
        for c in &mut out.coords {
            c[0] += offset[0];
            c[1] += offset[1];
        }
        out
    }

    /// Splits joints `[0, at)` and `[at, K)` into two sequences.
    pub fn split_joints(&self, at: usize) -> Result<(KeypointSeq2D, Option<KeypointSeq2D>)> {
        if at == 0 || at > self.joints {
            return Err(Error::invalid(format!(
                "split index {at} outside 1..={}",
                self.joints
            )));
        }
        let pick = |lo: usize, hi: usize| {
            let mut coords = Vec::with_capacity(self.frames * (hi - lo));
            let mut vis = Vec::with_capacity(self.frames * (hi - lo));
            for t in 0..self.frames {
                for k in lo..hi {
                    coords.push(self.get(t, k));
                    vis.push(self.is_visible(t, k));
                }
            }
            (coords, vis)
        };
        let (hc, hv) = pick(0, at);
        let head = KeypointSeq2D::checked(self.frames, at, hc, hv)?;
        let tail = if at < self.joints {
            let (oc, ov) = pick(at, self.joints);
            Some(KeypointSeq2D::checked(self.frames, self.joints - at, oc, ov)?)
        } else {
            None
        };
        Ok((head, tail))
    }
}

/// Joint layout of a skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    pub joint_names: Vec<String>,
    pub left_hip: usize,
    pub right_hip: usize,
    /// Explicit pelvis joint; `None` means the pelvis is the hip midpoint.
    pub pelvis: Option<usize>,
    pub foot_joints: Vec<usize>,
}

const COCO17: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

impl SkeletonSpec {
    /// 17-joint COCO layout. Hips are joints 11/12, ankles 15/16.
    pub fn coco17() -> Self {
        Self {
            joint_names: COCO17.iter().map(|s| s.to_string()).collect(),
            left_hip: 11,
            right_hip: 12,
            pelvis: None,
            foot_joints: vec![15, 16],
        }
    }

    /// Minimal skeleton with anonymous joints and the hips at `0` and `1`.
    pub fn with_hips(joints: usize, left_hip: usize, right_hip: usize) -> Self {
        Self {
            joint_names: (0..joints).map(|k| format!("j{k}")).collect(),
            left_hip,
            right_hip,
            pelvis: None,
            foot_joints: Vec::new(),
        }
    }

    pub fn joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.joints();
        if self.left_hip >= k || self.right_hip >= k {
            return Err(Error::invalid("hip index out of range"));
        }
        if self.left_hip == self.right_hip {
            return Err(Error::invalid("left and right hip must differ"));
        }
        if let Some(p) = self.pelvis {
            if p >= k {
                return Err(Error::invalid("pelvis index out of range"));
            }
        }
        if self.foot_joints.iter().any(|&f| f >= k) {
            return Err(Error::invalid("foot joint index out of range"));
        }
        Ok(())
    }

    #[inline]
    pub fn is_hip(&self, k: usize) -> bool {
        k == self.left_hip || k == self.right_hip
    }

    /// Non-hip joints in ascending index order; the order used for the local
    /// block of a [`MotionDecomposition`].
    pub fn local_joints(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.joints()).filter(move |&k| !self.is_hip(k))
    }

    fn check_against(&self, joints: usize) -> Result<()> {
        self.validate()?;
        if self.joints() != joints {
            return Err(Error::shape(format!(
                "skeleton has {} joints, sequence has {joints}",
                self.joints()
            )));
        }
        Ok(())
    }
}

/// Root (two hip tracks) plus centered local pose.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionDecomposition {
    pub frames: usize,
    /// `T x 2`: left hip then right hip, in pixels.
    pub root: Vec<[[f64; 2]; 2]>,
    /// `T x (K-2)` non-hip joints with the hip midpoint moved to `center`.
    pub local: Vec<[f64; 2]>,
    pub center: [f64; 2],
    pub visibility: Vec<bool>,
}

impl MotionDecomposition {
    pub fn local_joints(&self) -> usize {
        self.local.len() / self.frames.max(1)
    }

    /// Per-frame hip midpoint, the translation added back on recomposition.
    pub fn root_offset(&self, t: usize) -> [f64; 2] {
        let [l, r] = self.root[t];
        [0.5 * (l[0] + r[0]), 0.5 * (l[1] + r[1])]
    }

    /// Packs the decomposition into a `K`-joint sequence: hip slots hold the
    /// root tracks, every other slot its centered local position. This is the
    /// layout the diffusion model operates on.
    pub fn packed(&self, skel: &SkeletonSpec) -> Result<KeypointSeq2D> {
        let k = skel.joints();
        skel.check_against(self.local_joints() + 2)?;
        let nl = k - 2;
        let mut coords = Vec::with_capacity(self.frames * k);
        for t in 0..self.frames {
            let mut li = 0;
            for j in 0..k {
                if j == skel.left_hip {
                    coords.push(self.root[t][0]);
                } else if j == skel.right_hip {
                    coords.push(self.root[t][1]);
                } else {
                    coords.push(self.local[t * nl + li]);
                    li += 1;
                }
            }
        }
        KeypointSeq2D::with_visibility(self.frames, k, coords, self.visibility.clone())
    }

    /// Inverse of [`packed`](Self::packed).
    pub fn from_packed(packed: &KeypointSeq2D, skel: &SkeletonSpec, center: [f64; 2]) -> Result<Self> {
        skel.check_against(packed.joints())?;
        let t_n = packed.frames();
        let mut root = Vec::with_capacity(t_n);
        let mut local = Vec::with_capacity(t_n * (packed.joints() - 2));
        for t in 0..t_n {
            root.push([packed.get(t, skel.left_hip), packed.get(t, skel.right_hip)]);
            for j in skel.local_joints() {
                local.push(packed.get(t, j));
            }
        }
        Ok(Self {
            frames: t_n,
            root,
            local,
            center,
            visibility: packed.visibility().to_vec(),
        })
    }
}

/// Splits a sequence into the hip tracks and a local pose whose hip midpoint
/// sits at `center` (normally the principal point of the active camera).
pub fn decompose(seq: &KeypointSeq2D, skel: &SkeletonSpec, center: [f64; 2]) -> Result<MotionDecomposition> {
    skel.check_against(seq.joints())?;
    let mut root = Vec::with_capacity(seq.frames());
    let mut local = Vec::with_capacity(seq.frames() * (seq.joints() - 2));
    for t in 0..seq.frames() {
        let l = seq.get(t, skel.left_hip);
        let r = seq.get(t, skel.right_hip);
        let mid = [0.5 * (l[0] + r[0]), 0.5 * (l[1] + r[1])];
        root.push([l, r]);
        for j in skel.local_joints() {
            let p = seq.get(t, j);
            local.push([p[0] - mid[0] + center[0], p[1] - mid[1] + center[1]]);
        }
    }
    Ok(MotionDecomposition {
        frames: seq.frames(),
        root,
        local,
        center,
        visibility: seq.visibility().to_vec(),
    })
}

/// Restores the global sequence by adding the hip midpoint back to the local
/// pose.
pub fn recompose(dec: &MotionDecomposition, skel: &SkeletonSpec) -> Result<KeypointSeq2D> {
    let k = skel.joints();
    skel.validate()?;
    let nl = k.checked_sub(2).ok_or_else(|| Error::shape("skeleton too small"))?;
    if dec.root.len() != dec.frames || dec.local.len() != dec.frames * nl {
        return Err(Error::shape(format!(
            "decomposition of {} frames does not fit a {k}-joint skeleton",
            dec.frames
        )));
    }
    if dec.visibility.len() != dec.frames * k {
        return Err(Error::shape("decomposition visibility length mismatch"));
    }
    let mut coords = Vec::with_capacity(dec.frames * k);
    for t in 0..dec.frames {
        let mid = dec.root_offset(t);
        let mut li = 0;
        for j in 0..k {
            if j == skel.left_hip {
                coords.push(dec.root[t][0]);
            } else if j == skel.right_hip {
                coords.push(dec.root[t][1]);
            } else {
                let p = dec.local[t * nl + li];
                coords.push([p[0] - dec.center[0] + mid[0], p[1] - dec.center[1] + mid[1]]);
                li += 1;
            }
        }
    }
    KeypointSeq2D::with_visibility(dec.frames, k, coords, dec.visibility.clone())
}

/// Per-joint loss mask that is false exactly at the two hips.
pub fn hip_exclusion_mask(skel: &SkeletonSpec, joints: usize) -> Result<Vec<bool>> {
    if skel.left_hip >= joints || skel.right_hip >= joints || skel.left_hip == skel.right_hip {
        return Err(Error::invalid("hip indices invalid for joint count"));
    }
    Ok((0..joints).map(|k| !skel.is_hip(k)).collect())
}

/// Drops each visible entry independently with probability `drop_rate`.
pub fn random_drop_mask(visibility: &[bool], drop_rate: f64, seed: u64) -> Result<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_drop_mask_with(visibility, drop_rate, &mut rng)
}

pub fn random_drop_mask_with<R: Rng + ?Sized>(
    visibility: &[bool],
    drop_rate: f64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&drop_rate) {
        return Err(Error::invalid(format!("drop rate {drop_rate} outside [0, 1]")));
    }
    Ok(visibility
        .iter()
        .map(|&v| {
            // One draw per entry keeps the stream aligned regardless of
            // which entries were visible.
            let u: f64 = rng.random();
            v && u >= drop_rate
        })
        .collect())
}

/// Object keypoint track with a frame-independent visibility mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectKeypointSeq {
    frames: usize,
    keypoints: usize,
    coords: Vec<[f64; 2]>,
    static_visibility: Vec<bool>,
    frame_visibility: Vec<bool>,
}

impl ObjectKeypointSeq {
    pub fn new(
        frames: usize,
        keypoints: usize,
        coords: Vec<[f64; 2]>,
        static_visibility: Vec<bool>,
        frame_visibility: Vec<bool>,
    ) -> Result<Self> {
        if coords.len() != frames * keypoints || frame_visibility.len() != frames * keypoints {
            return Err(Error::shape("object keypoint arrays do not match T x M"));
        }
        if static_visibility.len() != keypoints {
            return Err(Error::shape("static visibility must have M entries"));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("object keypoints must be finite"));
        }
        // Frame visibility can never exceed the static mask.
        let frame_visibility = frame_visibility
            .iter()
            .enumerate()
            .map(|(i, &v)| v && static_visibility[i % keypoints.max(1)])
            .collect();
        Ok(Self {
            frames,
            keypoints,
            coords,
            static_visibility,
            frame_visibility,
        })
    }

    pub fn empty(frames: usize) -> Self {
        Self {
            frames,
            keypoints: 0,
            coords: Vec::new(),
            static_visibility: Vec::new(),
            frame_visibility: Vec::new(),
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn keypoints(&self) -> usize {
        self.keypoints
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn static_visibility(&self) -> &[bool] {
        &self.static_visibility
    }

    pub fn frame_visibility(&self) -> &[bool] {
        &self.frame_visibility
    }

    /// Reinterprets a keypoint sequence as an object track; the static mask
    /// is the set of keypoints visible in at least one frame.
    pub fn from_seq(seq: &KeypointSeq2D) -> Self {
        let m = seq.joints();
        let mut stat = vec![false; m];
        for t in 0..seq.frames() {
            for (k, s) in stat.iter_mut().enumerate() {
                *s |= seq.is_visible(t, k);
            }
        }
        Self {
            frames: seq.frames(),
            keypoints: m,
            coords: seq.coords().to_vec(),
            static_visibility: stat,
            frame_visibility: seq.visibility().to_vec(),
        }
    }
}

/// Concatenates human and object keypoints, human joints first.
pub fn concat_human_object(human: &KeypointSeq2D, object: &ObjectKeypointSeq) -> Result<KeypointSeq2D> {
    if human.frames() != object.frames() {
        return Err(Error::shape(format!(
            "human has {} frames, object has {}",
            human.frames(),
            object.frames()
        )));
    }
    let k = human.joints();
    let m = object.keypoints();
    let mut coords = Vec::with_capacity(human.frames() * (k + m));
    let mut vis = Vec::with_capacity(human.frames() * (k + m));
    for t in 0..human.frames() {
        coords.extend_from_slice(human.frame(t));
        vis.extend_from_slice(&human.visibility()[t * k..(t + 1) * k]);
        coords.extend_from_slice(&object.coords[t * m..(t + 1) * m]);
        vis.extend_from_slice(&object.frame_visibility[t * m..(t + 1) * m]);
    }
    KeypointSeq2D::with_visibility(human.frames(), k + m, coords, vis)
}

/// Inverse of [`concat_human_object`].
pub fn split_human_object(seq: &KeypointSeq2D, human_joints: usize) -> Result<(KeypointSeq2D, ObjectKeypointSeq)> {
    let (human, obj) = seq.split_joints(human_joints)?;
    let obj = obj
        .map(|o| ObjectKeypointSeq::from_seq(&o))
        .unwrap_or_else(|| ObjectKeypointSeq::empty(seq.frames()));
    Ok((human, obj))
}

/// `T x J` world-space joints in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq3D {
    frames: usize,
    joints: usize,
    coords: Vec<[f64; 3]>,
}

impl Seq3D {
    pub fn new(frames: usize, joints: usize, coords: Vec<[f64; 3]>) -> Result<Self> {
        if coords.len() != frames * joints {
            return Err(Error::shape(format!(
                "expected {} 3D points for {frames}x{joints}, got {}",
                frames * joints,
                coords.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("3D coordinates must be finite"));
        }
        Ok(Self {
            frames,
            joints,
            coords,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> [f64; 3] {
        self.coords[t * self.joints + j]
    }

    pub fn frame(&self, t: usize) -> &[[f64; 3]] {
        &self.coords[t * self.joints..(t + 1) * self.joints]
    }

    /// Joints `[lo, hi)` as a new sequence.
    pub fn select_joints(&self, lo: usize, hi: usize) -> Result<Seq3D> {
        if lo >= hi || hi > self.joints {
            return Err(Error::invalid(format!("joint range {lo}..{hi} invalid")));
        }
        let mut coords = Vec::with_capacity(self.frames * (hi - lo));
        for t in 0..self.frames {
            coords.extend_from_slice(&self.frame(t)[lo..hi]);
        }
        Seq3D::new(self.frames, hi - lo, coords)
    }
}
