//! Experiment configuration.
//!
//! [`ExperimentConfig`] holds SI values. The on-disk JSON form,
//! [`ConfigFile`], carries the unit in every key name and is converted at
//! load time:
//!
//! ```json
//! {
//!   "molecule": { "label": "40K87Rb", "mass_u": 127.0, "c6_au": 16130.0 },
//!   "trap": { "nu_z_hz": 23000.0, "nu_r_hz": 36.0, "lattice_wavelength_nm": 1064.0 },
//!   "temperature_nk": 800.0,
//!   "dipole_debye": 0.158,
//!   "efield_v_per_cm": 4000.0,
//!   "total_molecules": 34000.0,
//!   "aho_mass": "molecule"
//! }
//! ```
//!
//! `efield_v_per_cm` is optional metadata and never enters a calculation.
//! `aho_mass` selects the mass used in the oscillator length (`"molecule"`
//! or `"reduced"`, default `"molecule"`).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::{self, ATOMIC_MASS_UNIT};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::units;

/// Literature C6 of ground-state KRb in atomic units; override it in the
/// config when needed.
pub const DEFAULT_C6_AU: f64 = 16_130.0;
pub const DEFAULT_MASS_U: f64 = 127.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeSpec {
    /// kg
    pub mass: f64,
    pub label: String,
    /// J m^6
    pub c6: f64,
}

impl Default for MoleculeSpec {
    fn default() -> Self {
        MoleculeSpec {
            mass: DEFAULT_MASS_U * ATOMIC_MASS_UNIT,
            label: "40K87Rb".to_string(),
            c6: units::c6_atomic(DEFAULT_C6_AU),
        }
    }
}

impl MoleculeSpec {
    pub fn new(label: impl Into<String>, mass: f64, c6: f64) -> Result<Self> {
        ensure_positive("mass", mass)?;
        ensure_positive("c6", c6)?;
        Ok(MoleculeSpec { mass, label: label.into(), c6 })
    }

    /// Two-body reduced mass of identical molecules.
    pub fn reduced_mass(&self) -> f64 {
        self.mass / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapSpec {
    /// Axial (lattice) trap frequency, Hz.
    pub nu_z: f64,
    /// Transverse trap frequency, Hz.
    pub nu_r: f64,
    /// m
    pub lattice_wavelength: f64,
}

impl Default for TrapSpec {
    fn default() -> Self {
        TrapSpec { nu_z: 23e3, nu_r: 36.0, lattice_wavelength: 1064e-9 }
    }
}

impl TrapSpec {
    pub fn new(nu_z: f64, nu_r: f64, lattice_wavelength: f64) -> Result<Self> {
        ensure_positive("nu_z", nu_z)?;
        ensure_positive("nu_r", nu_r)?;
        ensure_positive("lattice_wavelength", lattice_wavelength)?;
        Ok(TrapSpec { nu_z, nu_r, lattice_wavelength })
    }

    pub fn lattice_wavevector(&self) -> f64 {
        2.0 * PI / self.lattice_wavelength
    }
}

/// Which mass enters the axial oscillator length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AhoMass {
    #[default]
    Molecule,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub molecule: MoleculeSpec,
    pub trap: TrapSpec,
    /// K
    pub temperature: f64,
    /// C m
    pub induced_dipole: f64,
    /// V/m, informational only.
    pub efield_metadata: Option<f64>,
    pub total_molecules: f64,
    pub aho_mass: AhoMass,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            molecule: MoleculeSpec::default(),
            trap: TrapSpec::default(),
            temperature: 800e-9,
            induced_dipole: units::debye(0.158),
            efield_metadata: Some(4e5),
            total_molecules: 34_000.0,
            aho_mass: AhoMass::Molecule,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("molecule.mass", self.molecule.mass)?;
        ensure_positive("molecule.c6", self.molecule.c6)?;
        ensure_positive("trap.nu_z", self.trap.nu_z)?;
        ensure_positive("trap.nu_r", self.trap.nu_r)?;
        ensure_positive("trap.lattice_wavelength", self.trap.lattice_wavelength)?;
        ensure_non_negative("temperature", self.temperature)?;
        ensure_non_negative("induced_dipole", self.induced_dipole)?;
        ensure_non_negative("total_molecules", self.total_molecules)?;
        Ok(())
    }

    pub fn reduced_mass(&self) -> f64 {
        self.molecule.reduced_mass()
    }

    /// Axial oscillator length under the configured mass convention.
    pub fn a_ho(&self) -> Result<f64> {
        let m = match self.aho_mass {
            AhoMass::Molecule => self.molecule.mass,
            AhoMass::Reduced => self.molecule.reduced_mass(),
        };
        constants::harmonic_length(m, self.trap.nu_z)
    }

    pub fn radial_size(&self) -> Result<f64> {
        constants::thermal_radial_size(self.temperature, self.trap.nu_r, self.molecule.mass)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let file: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        ExperimentConfig::try_from(file).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            molecule: MoleculeFile {
                label: self.molecule.label.clone(),
                mass_u: self.molecule.mass / ATOMIC_MASS_UNIT,
                c6_au: units::to_c6_atomic(self.molecule.c6),
            },
            trap: TrapFile {
                nu_z_hz: self.trap.nu_z,
                nu_r_hz: self.trap.nu_r,
                lattice_wavelength_nm: units::to_nanometer(self.trap.lattice_wavelength),
            },
            temperature_nk: units::to_nanokelvin(self.temperature),
            dipole_debye: units::to_debye(self.induced_dipole),
            efield_v_per_cm: self.efield_metadata.map(|e| e / 100.0),
            total_molecules: self.total_molecules,
            aho_mass: self.aho_mass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoleculeFile {
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default = "default_mass_u")]
    pub mass_u: f64,
    #[serde(default = "default_c6_au")]
    pub c6_au: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapFile {
    pub nu_z_hz: f64,
    pub nu_r_hz: f64,
    #[serde(default = "default_wavelength_nm")]
    pub lattice_wavelength_nm: f64,
}

/// JSON layout of an experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_molecule_file")]
    pub molecule: MoleculeFile,
    pub trap: TrapFile,
    pub temperature_nk: f64,
    pub dipole_debye: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efield_v_per_cm: Option<f64>,
    pub total_molecules: f64,
    #[serde(default)]
    pub aho_mass: AhoMass,
}

fn default_label() -> String {
    "40K87Rb".to_string()
}
fn default_mass_u() -> f64 {
    DEFAULT_MASS_U
}
fn default_c6_au() -> f64 {
    DEFAULT_C6_AU
}
fn default_wavelength_nm() -> f64 {
    1064.0
}
fn default_molecule_file() -> MoleculeFile {
    MoleculeFile { label: default_label(), mass_u: DEFAULT_MASS_U, c6_au: DEFAULT_C6_AU }
}

impl TryFrom<ConfigFile> for ExperimentConfig {
    type Error = Error;

    fn try_from(f: ConfigFile) -> Result<Self> {
        let cfg = ExperimentConfig {
            molecule: MoleculeSpec {
                mass: f.molecule.mass_u * ATOMIC_MASS_UNIT,
                label: f.molecule.label,
                c6: units::c6_atomic(f.molecule.c6_au),
            },
            trap: TrapSpec {
                nu_z: f.trap.nu_z_hz,
                nu_r: f.trap.nu_r_hz,
                lattice_wavelength: units::nanometer(f.trap.lattice_wavelength_nm),
            },
            temperature: units::nanokelvin(f.temperature_nk),
            induced_dipole: units::debye(f.dipole_debye),
            efield_metadata: f.efield_v_per_cm.map(|e| e * 100.0),
            total_molecules: f.total_molecules,
            aho_mass: f.aho_mass,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
