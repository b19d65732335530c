use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::D_PHYS;

pub const HEADS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Physics MLP encoder + cross-attention fusion + GRU decoder.
    Full,
    /// Physics vector concatenated to every token, linear down-projection.
    ConcatOnly,
    /// Cross-attention with a single linear physics projection as query.
    NoPhysEncoder,
    /// Decoder directly on scene tokens; no physics input.
    Naive,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::ConcatOnly,
        Variant::NoPhysEncoder,
        Variant::Naive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ConcatOnly => "concat_only",
            Variant::NoPhysEncoder => "no_phys_encoder",
            Variant::Naive => "naive",
        }
    }

    pub fn has_fusion(self) -> bool {
        matches!(self, Variant::Full | Variant::NoPhysEncoder)
    }

    pub fn uses_physics(self) -> bool {
        self != Variant::Naive
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Network widths. `d` is also the scene token width and GRU hidden size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub d: usize,
    pub d_hid: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub heads: usize,
    /// Target point is multiplied by this before entering the GRU.
    pub target_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchConfig {
    pub fn desk() -> Self {
        Self {
            d: 64,
            d_hid: 128,
            d_ff: 256,
            layers: 2,
            heads: HEADS,
            target_scale: 0.05,
        }
    }

    /// Four layers and a 512-wide feed-forward block.
    pub fn large() -> Self {
        Self {
            layers: 4,
            d_ff: 512,
            ..Self::desk()
        }
    }

    /// Reduced widths for fast experiments on one CPU core.
    pub fn compact() -> Self {
        Self {
            d: 32,
            d_hid: 64,
            d_ff: 64,
            layers: 2,
            heads: HEADS,
            target_scale: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_hid == 0 || self.d_ff == 0 || self.heads == 0 {
            return Err(Error::Config("architecture widths must be positive".into()));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d = {} not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if !(self.target_scale.is_finite() && self.target_scale > 0.0) {
            return Err(Error::Config("target_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Gradient-check / reporting groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Physics,
    Fusion,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub w: Slot,
    pub b: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionLayer {
    pub q: Affine,
    pub k: Affine,
    pub v: Affine,
    pub o: Affine,
    pub ln1: Affine,
    pub ff1: Affine,
    pub ff2: Affine,
    pub ln2: Affine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhysicsPath {
    Encoder { l1: Affine, l2: Affine },
    Linear(Affine),
    Concat(Affine),
    None,
}

/// Named parameter blocks inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub physics: PhysicsPath,
    pub fusion: Vec<FusionLayer>,
    pub gru_ih: Affine,
    pub gru_hh: Affine,
    pub head: Affine,
    pub entries: Vec<(String, Slot, Group)>,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    FanIn,
    Zero,
    One,
}

struct Builder {
    entries: Vec<(String, Slot, Group, Init)>,
    next: usize,
}

impl Builder {
    fn slot(&mut self, name: String, rows: usize, cols: usize, g: Group, init: Init) -> Slot {
        let s = Slot {
            offset: self.next,
            rows,
            cols,
        };
        self.next += s.len();
        self.entries.push((name, s, g, init));
        s
    }

    fn affine(&mut self, name: &str, out: usize, inp: usize, g: Group) -> Affine {
        Affine {
            w: self.slot(format!("{name}.w"), out, inp, g, Init::FanIn),
            b: self.slot(format!("{name}.b"), out, 1, g, Init::Zero),
        }
    }

    fn norm(&mut self, name: &str, n: usize, g: Group) -> Affine {
        Affine {
            w: self.slot(format!("{name}.gamma"), n, 1, g, Init::One),
            b: self.slot(format!("{name}.beta"), n, 1, g, Init::Zero),
        }
    }
}

fn build(variant: Variant, a: &ArchConfig) -> (Layout, Vec<(Slot, Init)>) {
    let mut b = Builder {
        entries: Vec::new(),
        next: 0,
    };
    let d = a.d;
    let physics = match variant {
        Variant::Full => PhysicsPath::Encoder {
            l1: b.affine("encoder.l1", a.d_hid, D_PHYS, Group::Physics),
            l2: b.affine("encoder.l2", d, a.d_hid, Group::Physics),
        },
        Variant::NoPhysEncoder => PhysicsPath::Linear(b.affine("physics_proj", d, D_PHYS, Group::Physics)),
        Variant::ConcatOnly => PhysicsPath::Concat(b.affine("concat_proj", d, d + D_PHYS, Group::Physics)),
        Variant::Naive => PhysicsPath::None,
    };
    let fusion = if variant.has_fusion() {
        (0..a.layers)
            .map(|l| {
                let n = |s: &str| format!("fusion.{l}.{s}");
                FusionLayer {
                    q: b.affine(&n("q"), d, d, Group::Fusion),
                    k: b.affine(&n("k"), d, d, Group::Fusion),
                    v: b.affine(&n("v"), d, d, Group::Fusion),
                    o: b.affine(&n("o"), d, d, Group::Fusion),
                    ln1: b.norm(&n("ln1"), d, Group::Fusion),
                    ff1: b.affine(&n("ff1"), a.d_ff, d, Group::Fusion),
                    ff2: b.affine(&n("ff2"), d, a.d_ff, Group::Fusion),
                    ln2: b.norm(&n("ln2"), d, Group::Fusion),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let gru_ih = b.affine("gru.ih", 3 * d, d + 2, Group::Decoder);
    let gru_hh = b.affine("gru.hh", 3 * d, d, Group::Decoder);
    let head = b.affine("head", 2, d, Group::Decoder);
    let inits = b.entries.iter().map(|(_, s, _, i)| (*s, *i)).collect();
    let layout = Layout {
        physics,
        fusion,
        gru_ih,
        gru_hh,
        head,
        entries: b.entries.into_iter().map(|(n, s, g, _)| (n, s, g)).collect(),
        total: b.next,
    };
    (layout, inits)
}

impl Layout {
    pub fn new(variant: Variant, arch: &ArchConfig) -> Self {
        build(variant, arch).0
    }

    pub fn group_indices(&self, g: Group) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|(_, _, eg)| *eg == g)
            .flat_map(|(_, s, _)| s.range())
            .collect()
    }

    pub fn groups(&self) -> Vec<Group> {
        let mut gs: Vec<Group> = self.entries.iter().map(|e| e.2).collect();
        gs.sort();
        gs.dedup();
        gs
    }
}

/// Trainable parameters for one variant, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub variant: Variant,
    pub arch: ArchConfig,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl PolicyParams {
    /// Fan-in scaled uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// zero biases, unit layer-norm gains.
    pub fn init(variant: Variant, arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (layout, inits) = build(variant, &arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.total];
        for (s, init) in inits {
            let dst = &mut values[s.range()];
            match init {
                Init::Zero => {}
                Init::One => dst.fill(1.0),
                Init::FanIn => {
                    let bound = 1.0 / (s.cols as f64).sqrt();
                    for v in dst {
                        *v = rng.random_range(-bound..bound);
                    }
                }
            }
        }
        Ok(Self {
            variant,
            arch,
            layout,
            values,
        })
    }

    pub fn zeros(variant: Variant, arch: ArchConfig) -> Result<Self> {
        let mut p = Self::init(variant, arch, 0)?;
        p.values.fill(0.0);
        Ok(p)
    }

    /// Rebuilds from a flat vector, checking its length against the layout.
    pub fn from_values(variant: Variant, arch: ArchConfig, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(variant, &arch);
        if values.len() != layout.total {
            return Err(Error::Shape(format!(
                "{} parameters for `{variant}`, layout needs {}",
                values.len(),
                layout.total
            )));
        }
        Ok(Self {
            variant,
            arch,
            layout,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, s: Slot) -> &[f64] {
        &self.values[s.range()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_are_contiguous_and_variant_specific() {
        let a = ArchConfig::compact();
        for v in Variant::ALL {
            let l = Layout::new(v, &a);
            let mut next = 0;
            for (_, s, _) in &l.entries {
                assert_eq!(s.offset, next);
                next += s.len();
            }
            assert_eq!(next, l.total);
            assert_eq!(l.fusion.len(), if v.has_fusion() { a.layers } else { 0 });
        }
        let naive = Layout::new(Variant::Naive, &a);
        assert!(naive.group_indices(Group::Physics).is_empty());
        assert_eq!(naive.groups(), vec![Group::Decoder]);
    }

    #[test]
    fn heads_must_divide_width() {
        let a = ArchConfig { d: 30, ..ArchConfig::compact() };
        assert!(PolicyParams::init(Variant::Full, a, 0).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = ArchConfig::compact();
        let p = PolicyParams::init(Variant::Full, a, 4).unwrap();
        assert_eq!(p, PolicyParams::init(Variant::Full, a, 4).unwrap());
        assert_ne!(p.values, PolicyParams::init(Variant::Full, a, 5).unwrap().values);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }
}
