//! Joint hierarchy and limb sets.
//!
//! Joints whose `parent_index` is `-1` hang directly off the root (the
//! pelvis), which is not itself a joint: local poses put it at the origin.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const UNREALEGO16: &str = include_str!("../skeletons/unrealego16.json");
const EGOCAP17: &str = include_str!("../skeletons/egocap17.json");

/// A directed `(parent, child)` edge of the joint tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Limb {
    pub parent: usize,
    pub child: usize,
}

impl Limb {
    pub const fn new(parent: usize, child: usize) -> Self {
        Self { parent, child }
    }
}

impl From<[usize; 2]> for Limb {
    fn from([parent, child]: [usize; 2]) -> Self {
        Self { parent, child }
    }
}

impl From<Limb> for [usize; 2] {
    fn from(l: Limb) -> Self {
        [l.parent, l.child]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skeleton {
    pub name: String,
    pub root: String,
    pub joint_names: Vec<String>,
    pub parent_index: Vec<i64>,
    pub estimated_joints: Vec<usize>,
    pub all_limbs: Vec<Limb>,
    pub peh_limbs: Vec<Limb>,
}

impl Skeleton {
    /// The 16-joint synthetic-capture skeleton: 15 estimated joints, 15
    /// limbs, 14 of them (all but head-neck) carrying perspective heatmaps.
    pub fn unrealego() -> Self {
        Self::from_json(UNREALEGO16).expect("bundled skeleton is valid")
    }

    /// The 17-joint real-capture skeleton (head dropped), 16 limbs.
    pub fn egocap() -> Self {
        Self::from_json(EGOCAP17).expect("bundled skeleton is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let skeleton: Skeleton =
            serde_json::from_str(text).map_err(|e| Error::format("skeleton", e.to_string()))?;
        skeleton.validate()?;
        Ok(skeleton)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    pub fn n_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn limb_name(&self, limb: Limb) -> String {
        format!(
            "{}->{}",
            self.joint_names[limb.parent], self.joint_names[limb.child]
        )
    }

    /// Parent of `joint`, or `None` when it is attached to the root.
    pub fn parent(&self, joint: usize) -> Option<usize> {
        usize::try_from(self.parent_index[joint]).ok()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joint_names.len();
        let fail = |msg: String| Err(Error::Skeleton(msg));
        if n == 0 {
            return fail("no joints".into());
        }
        if self.parent_index.len() != n {
            return fail(format!(
                "parent_index has {} entries for {n} joints",
                self.parent_index.len()
            ));
        }
        let mut names = HashSet::new();
        for name in &self.joint_names {
            if !names.insert(name.as_str()) {
                return fail(format!("duplicate joint name `{name}`"));
            }
        }
        if names.contains(self.root.as_str()) {
            return fail(format!("root `{}` must not also be a joint", self.root));
        }
        for (j, &p) in self.parent_index.iter().enumerate() {
            if p < -1 || p >= n as i64 || p == j as i64 {
                return fail(format!("joint {j} has invalid parent {p}"));
            }
        }
        if !self.parent_index.contains(&-1) {
            return fail("no joint is attached to the root".into());
        }
        // Every chain must reach the root within n steps.
        for start in 0..n {
            let mut j = start;
            let mut steps = 0;
            while let Some(p) = self.parent(j) {
                j = p;
                steps += 1;
                if steps > n {
                    return fail(format!("cycle through joint {start}"));
                }
            }
        }
        let check_limb = |l: &Limb, set: &str| -> Result<()> {
            if l.parent >= n || l.child >= n {
                return Err(Error::Skeleton(format!(
                    "{set} limb [{}, {}] out of range",
                    l.parent, l.child
                )));
            }
            if self.parent(l.child) != Some(l.parent) {
                return Err(Error::Skeleton(format!(
                    "{set} limb [{}, {}] is not a tree edge",
                    l.parent, l.child
                )));
            }
            Ok(())
        };
        let mut children = HashSet::new();
        for l in &self.all_limbs {
            check_limb(l, "all_limbs")?;
            if !children.insert(l.child) {
                return fail(format!("all_limbs lists child {} twice", l.child));
            }
        }
        let n_edges = self.parent_index.iter().filter(|&&p| p >= 0).count();
        if self.all_limbs.len() != n_edges {
            return fail(format!(
                "all_limbs has {} entries but the tree has {n_edges} edges",
                self.all_limbs.len()
            ));
        }
        let mut seen = HashSet::new();
        for l in &self.peh_limbs {
            check_limb(l, "peh_limbs")?;
            if !seen.insert(*l) {
                return fail(format!("peh_limbs lists [{}, {}] twice", l.parent, l.child));
            }
        }
        let mut est = HashSet::new();
        for &j in &self.estimated_joints {
            if j >= n {
                return fail(format!("estimated joint {j} out of range"));
            }
            if !est.insert(j) {
                return fail(format!("estimated joint {j} listed twice"));
            }
        }
        Ok(())
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::unrealego()
    }
}
