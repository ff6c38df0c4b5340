use std::fmt::Write as _;

use super::{fields, parse_document, parse_field, write_document, Metadata, TOOL_VERSION};
use crate::error::{Error, Result};
use crate::optics::PhotonStreamInfo;
use crate::stochastic::{PhotonRecord, SimulationRun, Source};

const MAGIC: &str = "#g2dyn-photons v1";
const COLUMNS: &str = "cycle,capture_ns,emission_ns,phase_seed";

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonFile {
    pub metadata: Metadata,
    pub info: PhotonStreamInfo,
    pub photons: Vec<PhotonRecord>,
}

impl PhotonFile {
    /// `scenario_hash` identifies the source the run came from.
    pub fn from_run(run: &SimulationRun, scenario_hash: &str) -> Self {
        let (rate, dephasing) = run.source.wavepacket_rates();
        let mut metadata = Metadata::new();
        metadata.set("scenario_hash", scenario_hash);
        metadata.set(
            "source",
            match &run.source {
                Source::Emitter(s) => s.label.clone(),
                Source::Coherent(_) => "coherent".to_string(),
            },
        );
        metadata.set("master_seed", run.master_seed);
        metadata.set("tool_version", TOOL_VERSION);
        PhotonFile {
            metadata,
            info: PhotonStreamInfo {
                n_cycles: run.n_cycles,
                pulse_period: run.pulse_period(),
                radiative_rate: rate,
                pure_dephasing_rate: dephasing,
            },
            photons: run.photons.clone(),
        }
    }
}

pub fn write_photons(file: &PhotonFile) -> String {
    let mut meta = file.metadata.clone();
    meta.set("n_cycles", file.info.n_cycles);
    meta.set("period_ns", file.info.pulse_period);
    meta.set("radiative_rate", file.info.radiative_rate);
    meta.set("pure_dephasing_rate", file.info.pure_dephasing_rate);
    let mut body = String::with_capacity(file.photons.len() * 48);
    for p in &file.photons {
        let _ = writeln!(
            body,
            "{},{},{},{}",
            p.cycle, p.capture_time, p.emission_time, p.phase_seed
        );
    }
    write_document(MAGIC, &meta, COLUMNS, &body)
}

pub fn read_photons(text: &str) -> Result<PhotonFile> {
    let (metadata, records) = parse_document(text, MAGIC, COLUMNS)?;
    let info = PhotonStreamInfo {
        n_cycles: metadata.require("n_cycles")?,
        pulse_period: metadata.require("period_ns")?,
        radiative_rate: metadata.require("radiative_rate")?,
        pure_dephasing_rate: metadata.require("pure_dephasing_rate")?,
    };
    let mut photons = Vec::with_capacity(records.len());
    for (n, line) in records {
        let [c, s, e, seed] = fields::<4>(n, line)?;
        let p = PhotonRecord {
            cycle: parse_field(n, "cycle", c)?,
            capture_time: parse_field(n, "capture_ns", s)?,
            emission_time: parse_field(n, "emission_ns", e)?,
            phase_seed: parse_field(n, "phase_seed", seed)?,
        };
        if p.cycle >= info.n_cycles
            || !(0.0 <= p.capture_time && p.capture_time <= p.emission_time)
            || p.emission_time >= info.pulse_period
        {
            return Err(Error::parse_line(
                n,
                "photon outside its cycle or with capture after emission",
            ));
        }
        if photons
            .last()
            .is_some_and(|q: &PhotonRecord| (q.cycle, q.emission_time) > (p.cycle, p.emission_time))
        {
            return Err(Error::parse_line(n, "photons are not in canonical order"));
        }
        photons.push(p);
    }
    Ok(PhotonFile {
        metadata,
        info,
        photons,
    })
}
