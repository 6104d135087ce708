//! Contact-layer clip generation.
//!
//! Coordinates are integer database units of a quarter nanometer
//! ([`DBU_PER_NM`]), so half pitches such as 22.5 nm and the quarter-width
//! window shifts used for edge sampling stay exact.

use thiserror::Error;

use crate::d4::D4;
use crate::rng::{derive_seed, SplitMix64};

/// Integer coordinate in database units.
pub type Coord = i64;

/// Database units per nanometer.
pub const DBU_PER_NM: Coord = 4;

/// Default clip edge, 2 um.
pub const DEFAULT_CLIP_NM: f64 = 2000.0;

pub fn nm_to_dbu(nm: f64) -> Coord {
    (nm * DBU_PER_NM as f64).round() as Coord
}

pub fn dbu_to_nm(dbu: Coord) -> f64 {
    dbu as f64 / DBU_PER_NM as f64
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("design rule invalid: {0}")]
    BadRule(String),
    #[error("array {m}x{n} at steps ({step_x}, {step_y}) dbu does not fit in the clip")]
    ArrayDoesNotFit {
        m: usize,
        n: usize,
        step_x: Coord,
        step_y: Coord,
    },
    #[error("step {step} dbu is not a positive multiple of the minimum pitch {pitch} dbu")]
    StepNotMultiple { step: Coord, pitch: Coord },
    #[error("array dimensions must be odd, got {m}x{n}")]
    EvenArrayDimension { m: usize, n: usize },
    #[error("keep probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("clip mix fractions must be nonnegative and sum to 1")]
    BadMix,
    #[error("target count must be at least 1")]
    EmptyTarget,
    #[error("only {available} distinct full arrays exist, {requested} requested")]
    InsufficientVariety { requested: usize, available: usize },
}

/// Minimum contact pitch, contact width (half pitch) and clip edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignRule {
    min_pitch: Coord,
    contact_width: Coord,
    clip_size: Coord,
}

impl DesignRule {
    /// Rule for a pitch in nanometers with the default 2 um clip.
    pub fn with_pitch_nm(pitch_nm: f64) -> Result<Self, GeometryError> {
        Self::new(nm_to_dbu(pitch_nm), nm_to_dbu(DEFAULT_CLIP_NM))
    }

    pub fn new(min_pitch: Coord, clip_size: Coord) -> Result<Self, GeometryError> {
        if min_pitch <= 0 || min_pitch % 2 != 0 {
            return Err(GeometryError::BadRule(format!(
                "pitch {min_pitch} dbu must be positive and even"
            )));
        }
        if clip_size < 4 * min_pitch || clip_size % 2 != 0 {
            return Err(GeometryError::BadRule(format!(
                "clip size {clip_size} dbu must be even and at least four pitches"
            )));
        }
        Ok(Self {
            min_pitch,
            contact_width: min_pitch / 2,
            clip_size,
        })
    }

    pub fn min_pitch(&self) -> Coord {
        self.min_pitch
    }

    pub fn contact_width(&self) -> Coord {
        self.contact_width
    }

    pub fn clip_size(&self) -> Coord {
        self.clip_size
    }

    pub fn center(&self) -> Coord {
        self.clip_size / 2
    }

    /// Largest centered offset at which a contact still lies fully inside.
    fn max_offset(&self) -> Coord {
        self.clip_size / 2 - self.contact_width / 2
    }
}

/// Axis-aligned square contact, stored by its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contact {
    pub cx: Coord,
    pub cy: Coord,
    pub width: Coord,
}

impl Contact {
    pub fn x0(&self) -> Coord {
        self.cx - self.width / 2
    }
    pub fn x1(&self) -> Coord {
        self.cx + self.width / 2
    }
    pub fn y0(&self) -> Coord {
        self.cy - self.width / 2
    }
    pub fn y1(&self) -> Coord {
        self.cy + self.width / 2
    }
}

/// Which edge of the center contact a sample measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Edge {
    Left = 0,
    Right = 1,
    Bottom = 2,
    Top = 3,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Bottom, Edge::Top];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Unit vector from the edge midpoint toward the contact center.
    pub fn inward(self) -> (i64, i64) {
        match self {
            Edge::Left => (1, 0),
            Edge::Right => (-1, 0),
            Edge::Bottom => (0, 1),
            Edge::Top => (0, -1),
        }
    }
}

/// A square window of contacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    pub contacts: Vec<Contact>,
    pub rule: DesignRule,
}

impl Clip {
    pub fn new(rule: DesignRule, contacts: Vec<Contact>) -> Self {
        Self { contacts, rule }
    }

    pub fn has_center_contact(&self) -> bool {
        let c = self.rule.center();
        self.contacts.iter().any(|k| k.cx == c && k.cy == c)
    }

    /// Checks the generated-clip invariants: center contact present, every
    /// contact fully inside the window, pairwise center spacing at least the
    /// minimum pitch.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.has_center_contact() {
            return Err("no contact at the clip center".into());
        }
        let size = self.rule.clip_size();
        for k in &self.contacts {
            if k.x0() < 0 || k.y0() < 0 || k.x1() > size || k.y1() > size {
                return Err(format!("contact at ({}, {}) leaves the window", k.cx, k.cy));
            }
        }
        let p2 = self.rule.min_pitch().pow(2);
        for (i, a) in self.contacts.iter().enumerate() {
            for b in &self.contacts[i + 1..] {
                if (a.cx - b.cx).pow(2) + (a.cy - b.cy).pow(2) < p2 {
                    return Err(format!(
                        "contacts ({}, {}) and ({}, {}) closer than the pitch",
                        a.cx, a.cy, b.cx, b.cy
                    ));
                }
            }
        }
        Ok(())
    }

    /// Applies a square symmetry about the clip center.
    pub fn transformed(&self, g: D4) -> Clip {
        let c = self.rule.center();
        let contacts = self
            .contacts
            .iter()
            .map(|k| {
                let (x, y) = g.apply_i64((k.cx - c, k.cy - c));
                Contact {
                    cx: x + c,
                    cy: y + c,
                    width: k.width,
                }
            })
            .collect();
        Clip::new(self.rule, contacts)
    }

    /// Translates every contact, dropping those no longer fully inside.
    pub fn translated(&self, dx: Coord, dy: Coord) -> Clip {
        let size = self.rule.clip_size();
        let contacts = self
            .contacts
            .iter()
            .map(|k| Contact {
                cx: k.cx + dx,
                cy: k.cy + dy,
                width: k.width,
            })
            .filter(|k| k.x0() >= 0 && k.y0() >= 0 && k.x1() <= size && k.y1() <= size)
            .collect();
        Clip::new(self.rule, contacts)
    }
}

fn check_step(rule: &DesignRule, step: Coord) -> Result<(), GeometryError> {
    if step <= 0 || step % rule.min_pitch() != 0 {
        return Err(GeometryError::StepNotMultiple {
            step,
            pitch: rule.min_pitch(),
        });
    }
    Ok(())
}

fn check_grid(
    rule: &DesignRule,
    m: usize,
    n: usize,
    step_x: Coord,
    step_y: Coord,
) -> Result<(), GeometryError> {
    if m.is_multiple_of(2) || n.is_multiple_of(2) {
        return Err(GeometryError::EvenArrayDimension { m, n });
    }
    check_step(rule, step_x)?;
    check_step(rule, step_y)?;
    let half_x = (m as Coord - 1) / 2 * step_x;
    let half_y = (n as Coord - 1) / 2 * step_y;
    if half_x > rule.max_offset() || half_y > rule.max_offset() {
        return Err(GeometryError::ArrayDoesNotFit {
            m,
            n,
            step_x,
            step_y,
        });
    }
    Ok(())
}

/// Grid slots of an `m x n` centered array, row-major from the bottom-left.
fn grid_slots(rule: &DesignRule, m: usize, n: usize, step_x: Coord, step_y: Coord) -> Vec<Contact> {
    let c = rule.center();
    let (hm, hn) = ((m as Coord - 1) / 2, (n as Coord - 1) / 2);
    let mut out = Vec::with_capacity(m * n);
    for row in -hn..=hn {
        for col in -hm..=hm {
            out.push(Contact {
                cx: c + col * step_x,
                cy: c + row * step_y,
                width: rule.contact_width(),
            });
        }
    }
    out
}

/// Full `m x n` contact array (m columns, n rows) centered on the clip.
pub fn gen_contact_array(
    rule: &DesignRule,
    m: usize,
    n: usize,
    step_x: Coord,
    step_y: Coord,
) -> Result<Clip, GeometryError> {
    check_grid(rule, m, n, step_x, step_y)?;
    Ok(Clip::new(*rule, grid_slots(rule, m, n, step_x, step_y)))
}

/// Array with each non-center slot kept independently with `keep_prob`.
pub fn gen_randomized_array(
    rule: &DesignRule,
    m: usize,
    n: usize,
    step: Coord,
    keep_prob: f64,
    rng_seed: u64,
) -> Result<Clip, GeometryError> {
    if !(0.0..=1.0).contains(&keep_prob) {
        return Err(GeometryError::BadProbability(keep_prob));
    }
    check_grid(rule, m, n, step, step)?;
    let c = rule.center();
    let mut rng = SplitMix64::new(rng_seed);
    let contacts = grid_slots(rule, m, n, step, step)
        .into_iter()
        .filter(|k| (k.cx == c && k.cy == c) || rng.next_f64() < keep_prob)
        .collect();
    Ok(Clip::new(*rule, contacts))
}

/// Center contact plus rejection-sampled uniform positions.
///
/// Stops after `n_contacts` are placed or `max_attempts` candidates have been
/// drawn, whichever comes first; the result always holds the center contact.
pub fn gen_random_positions(
    rule: &DesignRule,
    n_contacts: usize,
    rng_seed: u64,
    max_attempts: usize,
) -> Clip {
    let c = rule.center();
    let w = rule.contact_width();
    let mut contacts = vec![Contact {
        cx: c,
        cy: c,
        width: w,
    }];
    let lo = w / 2;
    let span = (rule.clip_size() - w) as u64 + 1;
    let p2 = rule.min_pitch().pow(2);
    let mut rng = SplitMix64::new(rng_seed);
    let mut attempts = 0;
    while contacts.len() < n_contacts.max(1) && attempts < max_attempts {
        attempts += 1;
        let cx = lo + rng.below(span) as Coord;
        let cy = lo + rng.below(span) as Coord;
        if contacts
            .iter()
            .all(|k| (k.cx - cx).pow(2) + (k.cy - cy).pow(2) >= p2)
        {
            contacts.push(Contact { cx, cy, width: w });
        }
    }
    Clip::new(*rule, contacts)
}

/// Feasible one-axis (count, step) pairs in lexicographic order. A single
/// contact has no meaningful step, so count 1 appears once with step = pitch.
fn axis_options(rule: &DesignRule) -> Vec<(usize, Coord)> {
    let mut out = vec![(1, rule.min_pitch())];
    let max_off = rule.max_offset();
    let mut m = 3usize;
    while (m as Coord - 1) / 2 * rule.min_pitch() <= max_off {
        let half = (m as Coord - 1) / 2;
        let mut step = rule.min_pitch();
        while half * step <= max_off {
            out.push((m, step));
            step += rule.min_pitch();
        }
        m += 2;
    }
    out
}

/// Mix of the three clip families; fractions must sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipMix {
    pub array: f64,
    pub randomized_array: f64,
    pub random_positions: f64,
}

impl ClipMix {
    pub fn new(array: f64, randomized_array: f64, random_positions: f64) -> Self {
        Self {
            array,
            randomized_array,
            random_positions,
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let parts = [self.array, self.randomized_array, self.random_positions];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::BadMix);
        }
        Ok(())
    }
}

impl Default for ClipMix {
    fn default() -> Self {
        Self::new(0.3, 0.4, 0.3)
    }
}

/// Contact-count range used for random-position clips.
const RANDOM_POSITION_COUNTS: (u64, u64) = (20, 300);
const RANDOM_POSITION_ATTEMPTS: usize = 20_000;

/// Deterministic clip set: full arrays in lexicographic `(m, n, step_x,
/// step_y)` order, then randomized arrays, then random-position clips.
pub fn enumerate_clips(
    rule: &DesignRule,
    target_count: usize,
    mix: ClipMix,
    rng_seed: u64,
) -> Result<Vec<Clip>, GeometryError> {
    if target_count == 0 {
        return Err(GeometryError::EmptyTarget);
    }
    mix.validate()?;
    let n_array = (mix.array * target_count as f64).floor() as usize;
    let n_rand = (mix.randomized_array * target_count as f64).floor() as usize;
    let n_pos = target_count - n_array - n_rand;

    let axes = axis_options(rule);
    let available = axes.len() * axes.len();
    if n_array > available {
        return Err(GeometryError::InsufficientVariety {
            requested: n_array,
            available,
        });
    }
    let mut clips = Vec::with_capacity(target_count);
    'outer: for &(m, sx) in &axes {
        for &(n, sy) in &axes {
            if clips.len() == n_array {
                break 'outer;
            }
            clips.push(gen_contact_array(rule, m, n, sx, sy)?);
        }
    }

    // Randomized arrays: odd dimensions and a shared step drawn per clip.
    let mut rng = SplitMix64::stream(rng_seed, 1);
    for i in 0..n_rand {
        let (m, step) = axes[rng.below(axes.len() as u64) as usize];
        let max_half = rule.max_offset() / step;
        let n = 2 * rng.below(max_half as u64 + 1) as usize + 1;
        let keep = rng.uniform(0.2, 0.9);
        clips.push(gen_randomized_array(
            rule,
            m,
            n,
            step,
            keep,
            derive_seed(rng_seed, 1000 + i as u64),
        )?);
    }

    let mut rng = SplitMix64::stream(rng_seed, 2);
    let (lo, hi) = RANDOM_POSITION_COUNTS;
    for i in 0..n_pos {
        let count = (lo + rng.below(hi - lo + 1)) as usize;
        clips.push(gen_random_positions(
            rule,
            count,
            derive_seed(rng_seed, 1_000_000 + i as u64),
            RANDOM_POSITION_ATTEMPTS,
        ));
    }
    Ok(clips)
}
