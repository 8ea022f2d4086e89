//! Fermionic exchange-symmetry selection rules and the channel taxonomy.
//!
//! A two-molecule collision channel is labelled by `(eta, L, gamma, M)`:
//! `eta` is the exchange symmetry of the internal-state part of the
//! wavefunction, `gamma` that of the relative axial motion, `L` the 3D
//! partial wave relevant at short range and `M` the projection of the
//! relative angular momentum on the lattice axis. For identical fermions
//!
//! - at short range (3D):  `eta (-1)^L = -1`
//! - at long range (2D):   `eta gamma (-1)^M = -1`

use std::fmt;

use serde::{Deserialize, Serialize};

/// An exchange eigenvalue, +1 or -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "-1")]
    Minus,
    #[serde(rename = "+1")]
    Plus,
}

impl Sign {
    pub fn value(self) -> i32 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub const BOTH: [Sign; 2] = [Sign::Minus, Sign::Plus];
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+1",
            Sign::Minus => "-1",
        })
    }
}

fn parity(n: i64) -> i32 {
    if n.rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

/// Short-range selection rule: `eta (-1)^L = -1`.
pub fn valid_short_range(eta: Sign, l: u32) -> bool {
    eta.value() * parity(l as i64) == -1
}

/// Long-range selection rule: `eta gamma (-1)^M = -1`.
pub fn valid_long_range(eta: Sign, gamma: Sign, m: i32) -> bool {
    eta.value() * gamma.value() * parity(m as i64) == -1
}

/// How two colliding molecules are prepared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairConfiguration {
    pub same_internal_state: bool,
    pub v1: u32,
    pub v2: u32,
}

impl PairConfiguration {
    pub fn new(same_internal_state: bool, v1: u32, v2: u32) -> Self {
        PairConfiguration { same_internal_state, v1, v2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelQuantumNumbers {
    pub eta: Sign,
    pub l: u32,
    pub gamma: Sign,
    pub m: i32,
}

impl ChannelQuantumNumbers {
    pub fn new(eta: Sign, l: u32, gamma: Sign, m: i32) -> Self {
        ChannelQuantumNumbers { eta, l, gamma, m }
    }

    pub fn is_allowed(&self) -> bool {
        valid_short_range(self.eta, self.l) && valid_long_range(self.eta, self.gamma, self.m)
    }

    /// Barrier ordering key: `(L, |M|)`, with `gamma = -1` ahead of
    /// `gamma = +1` on ties, then `M` and `eta` for a total order.
    fn order_key(&self) -> (u32, u32, Sign, i32, Sign) {
        (self.l, self.m.unsigned_abs(), self.gamma, self.m, self.eta)
    }
}

impl fmt::Display for ChannelQuantumNumbers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(eta={}, L={}, gamma={}, M={})", self.eta, self.l, self.gamma, self.m)
    }
}

/// The three lowest adiabatic channels, in order of increasing barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelLabel {
    /// Isotropic, no centrifugal barrier.
    One,
    /// "Head-to-tail": attractive dipolar, odd axial exchange.
    Two,
    /// "Side-by-side": repulsive dipolar, `M = +-1`.
    Three,
}

impl ChannelLabel {
    pub const ALL: [ChannelLabel; 3] = [ChannelLabel::One, ChannelLabel::Two, ChannelLabel::Three];

    pub fn index(self) -> u8 {
        match self {
            ChannelLabel::One => 1,
            ChannelLabel::Two => 2,
            ChannelLabel::Three => 3,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(ChannelLabel::One),
            2 => Some(ChannelLabel::Two),
            3 => Some(ChannelLabel::Three),
            _ => None,
        }
    }

    /// Canonical quantum numbers; channel `|3>` is reported with `M = +1`
    /// (its `M = -1` partner is degenerate).
    pub fn quantum_numbers(self) -> ChannelQuantumNumbers {
        match self {
            ChannelLabel::One => ChannelQuantumNumbers::new(Sign::Minus, 0, Sign::Plus, 0),
            ChannelLabel::Two => ChannelQuantumNumbers::new(Sign::Plus, 1, Sign::Minus, 0),
            ChannelLabel::Three => ChannelQuantumNumbers::new(Sign::Plus, 1, Sign::Plus, 1),
        }
    }

    /// Matches canonical numbers, treating `M` and `-M` alike.
    pub fn from_quantum_numbers(q: &ChannelQuantumNumbers) -> Option<Self> {
        ChannelLabel::ALL.into_iter().find(|c| {
            let k = c.quantum_numbers();
            k.eta == q.eta && k.l == q.l && k.gamma == q.gamma && k.m.abs() == q.m.abs()
        })
    }
}

impl fmt::Display for ChannelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{}>", self.index())
    }
}

/// All channels with `L <= l_max`, `|M| <= m_max` that satisfy both
/// selection rules and the constraints of the pair: identical internal
/// states force `eta = +1`, identical axial levels force `gamma = +1`.
/// Sorted by barrier ordering.
pub fn enumerate_channels(pair: &PairConfiguration, l_max: u32, m_max: u32) -> Vec<ChannelQuantumNumbers> {
    let m_max = m_max as i32;
    let mut out = Vec::new();
    for eta in Sign::BOTH {
        if pair.same_internal_state && eta == Sign::Minus {
            continue;
        }
        for gamma in Sign::BOTH {
            if pair.v1 == pair.v2 && gamma == Sign::Minus {
                continue;
            }
            for l in 0..=l_max {
                for m in -m_max..=m_max {
                    let q = ChannelQuantumNumbers::new(eta, l, gamma, m);
                    if q.is_allowed() {
                        out.push(q);
                    }
                }
            }
        }
    }
    out.sort_by_key(|q| q.order_key());
    out
}

/// The allowed channel with the lowest centrifugal barrier. For distinct
/// internal states `eta = -1` is chosen because it admits `L = 0`.
pub fn classify_lowest_channel(pair: &PairConfiguration) -> ChannelLabel {
    match (pair.same_internal_state, pair.v1 == pair.v2) {
        (false, _) => ChannelLabel::One,
        (true, false) => ChannelLabel::Two,
        (true, true) => ChannelLabel::Three,
    }
}
