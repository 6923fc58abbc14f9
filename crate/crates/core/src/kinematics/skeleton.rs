use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kinematics::rotation::Vec3;

const HUMANOID24: &str = include_str!("../../data/humanoid24.skel");

/// Named joints of the built-in humanoid.
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const L_HIP: usize = 1;
    pub const R_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const L_KNEE: usize = 4;
    pub const R_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const L_ANKLE: usize = 7;
    pub const R_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const L_FOOT: usize = 10;
    pub const R_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const L_COLLAR: usize = 13;
    pub const R_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const L_SHOULDER: usize = 16;
    pub const R_SHOULDER: usize = 17;
    pub const L_ELBOW: usize = 18;
    pub const R_ELBOW: usize = 19;
    pub const L_WRIST: usize = 20;
    pub const R_WRIST: usize = 21;
    pub const L_HAND: usize = 22;
    pub const R_HAND: usize = 23;
}

/// Rigid kinematic tree. Joint 0 is the root and every parent index is
/// smaller than its child's, so a forward sweep visits parents first.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    parents: Vec<Option<usize>>,
    offsets: Vec<Vec3>,
}

impl Skeleton {
    pub fn new(parents: Vec<Option<usize>>, offsets: Vec<Vec3>) -> Result<Self> {
        if parents.is_empty() || parents.len() != offsets.len() {
            return Err(Error::Data(format!(
                "skeleton needs matching, non-empty parent ({}) and offset ({}) lists",
                parents.len(),
                offsets.len()
            )));
        }
        if parents[0].is_some() {
            return Err(Error::Data("joint 0 must be the root".into()));
        }
        for (j, parent) in parents.iter().enumerate().skip(1) {
            match parent {
                Some(p) if *p < j => {}
                Some(p) => {
                    return Err(Error::Data(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )))
                }
                None => return Err(Error::Data(format!("joint {j} is a second root"))),
            }
        }
        if offsets.iter().any(|o| o.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data("skeleton offsets must be finite".into()));
        }
        Ok(Self { parents, offsets })
    }

    /// The shipped 24-joint humanoid.
    pub fn humanoid24() -> Self {
        HUMANOID24.parse().expect("built-in skeleton is valid")
    }

    /// A straight chain of `joints` links of length `link` along +Z; handy
    /// for small test models.
    pub fn chain(joints: usize, link: f64) -> Result<Self> {
        let parents = (0..joints).map(|j| j.checked_sub(1)).collect();
        let offsets = (0..joints)
            .map(|j| if j == 0 { Vec3::zeros() } else { Vec3::new(0.0, 0.0, link) })
            .collect();
        Self::new(parents, offsets)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn offset(&self, joint: usize) -> &Vec3 {
        &self.offsets[joint]
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# joint_index parent_index off_x off_y off_z\n");
        for (j, (p, o)) in self.parents.iter().zip(&self.offsets).enumerate() {
            let p = p.map_or(-1, |p| p as i64);
            out.push_str(&format!("{j} {p} {} {} {}\n", o.x, o.y, o.z));
        }
        out
    }
}

impl FromStr for Skeleton {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut parents = Vec::new();
        let mut offsets = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Data(format!("skeleton line {}: malformed {raw:?}", idx + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(bad());
            }
            let joint: usize = fields[0].parse().map_err(|_| bad())?;
            if joint != parents.len() {
                return Err(Error::Data(format!(
                    "skeleton line {}: joint {joint} out of order",
                    idx + 1
                )));
            }
            let parent: i64 = fields[1].parse().map_err(|_| bad())?;
            parents.push(if parent < 0 { None } else { Some(parent as usize) });
            let mut off = [0.0; 3];
            for (slot, field) in off.iter_mut().zip(&fields[2..]) {
                *slot = field.parse().map_err(|_| bad())?;
            }
            offsets.push(Vec3::new(off[0], off[1], off[2]));
        }
        Self::new(parents, offsets)
    }
}
