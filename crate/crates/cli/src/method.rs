use std::fmt;
use std::str::FromStr;

use bata_core::baselines::{self, LudConfig, OnedsfmConfig};
use bata_core::bata::{self, BataConfig, Init};
use bata_core::irls::SolveDiagnostics;
use bata_core::{Error, Locations, LossKind, Result, ViewGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Bata,
    RevisedLud,
    Lud,
    Onedsfm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Bata, Method::RevisedLud, Method::Lud, Method::Onedsfm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bata => "bata",
            Method::RevisedLud => "revisedlud",
            Method::Lud => "lud",
            Method::Onedsfm => "onedsfm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (bata, revisedlud, lud, onedsfm)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitChoice {
    Random,
    Convex,
    File,
}

impl FromStr for InitChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(InitChoice::Random),
            "convex" => Ok(InitChoice::Convex),
            "file" => Ok(InitChoice::File),
            other => Err(Error::Config(format!("unknown init '{other}' (random, convex, file)"))),
        }
    }
}

/// Solver overrides shared by every method; unset fields keep each method's defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverOptions {
    pub loss: Option<String>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub irls_iter: Option<usize>,
    pub bcd_iter: Option<usize>,
    pub conv_tol: Option<f64>,
    pub init: Option<InitChoice>,
    pub init_locations: Option<Locations>,
    pub c: Option<f64>,
}

impl SolverOptions {
    fn loss_override(&self, default: LossKind) -> Result<LossKind> {
        let name = match &self.loss {
            Some(name) => name.as_str(),
            None => {
                // width flags alone adjust the default loss when it matches
                return Ok(match default {
                    LossKind::Cauchy { alpha } => LossKind::cauchy(self.alpha.unwrap_or(alpha))?,
                    LossKind::Huber { delta } => LossKind::huber(self.delta.unwrap_or(delta))?,
                    other => other,
                });
            }
        };
        match name {
            "l2" => Ok(LossKind::SquaredL2),
            "huber" => LossKind::huber(self.delta.unwrap_or(bata_core::loss::DEFAULT_HUBER_DELTA)),
            "cauchy" => LossKind::cauchy(self.alpha.unwrap_or(bata_core::loss::DEFAULT_CAUCHY_ALPHA)),
            "l21" => LossKind::l21(bata_core::loss::DEFAULT_L21_FLOOR),
            other => Err(Error::Config(format!("unknown loss '{other}' (l2, huber, cauchy, l21)"))),
        }
    }

    fn init_override(&self, default: Init) -> Result<Init> {
        match self.init {
            None => Ok(default),
            Some(InitChoice::Random) => Ok(Init::Random),
            Some(InitChoice::Convex) => Ok(Init::CONVEX_DEFAULT),
            Some(InitChoice::File) => self
                .init_locations
                .clone()
                .map(Init::Provided)
                .ok_or_else(|| Error::Config("--init file needs --init-file".into())),
        }
    }

    pub fn bata_config(&self, seed: u64) -> Result<BataConfig> {
        let d = BataConfig::default();
        Ok(BataConfig {
            irls_iter: self.irls_iter.unwrap_or(d.irls_iter),
            bcd_iter: self.bcd_iter.unwrap_or(d.bcd_iter),
            loss: self.loss_override(d.loss)?,
            beta: self.beta.unwrap_or(d.beta),
            conv_tol: self.conv_tol.unwrap_or(d.conv_tol),
            init: self.init_override(d.init)?,
            seed,
            reg_rel: d.reg_rel,
        })
    }

    pub fn lud_config(&self, seed: u64) -> Result<LudConfig> {
        let d = LudConfig::default();
        Ok(LudConfig {
            c: self.c.unwrap_or(d.c),
            irls_iter: self.irls_iter.unwrap_or(d.irls_iter),
            bcd_iter: self.bcd_iter.unwrap_or(d.bcd_iter),
            loss: self.loss_override(d.loss)?,
            beta: self.beta.unwrap_or(d.beta),
            conv_tol: self.conv_tol.unwrap_or(d.conv_tol),
            init: self.init_override(d.init)?,
            seed,
            reg_rel: d.reg_rel,
        })
    }

    pub fn onedsfm_config(&self, seed: u64) -> Result<OnedsfmConfig> {
        let d = OnedsfmConfig::default();
        Ok(OnedsfmConfig {
            loss: self.loss_override(d.loss)?,
            max_iter: self.irls_iter.map_or(d.max_iter, |k| k.max(1)),
            init: self.init_override(d.init)?,
            seed,
            ..d
        })
    }
}

pub fn run_method(
    method: Method,
    g: &ViewGraph,
    opts: &SolverOptions,
    seed: u64,
) -> Result<(Locations, SolveDiagnostics)> {
    match method {
        Method::Bata => bata::solve(g, &opts.bata_config(seed)?),
        Method::RevisedLud => baselines::revised_lud_solve(g, &opts.lud_config(seed)?),
        Method::Lud => baselines::lud_solve(g, &opts.lud_config(seed)?),
        Method::Onedsfm => baselines::onedsfm_solve(g, &opts.onedsfm_config(seed)?),
    }
}
