//! Machine-readable extraction reports: everything the pipeline measured and
//! produced, keyed by a digest of the input set. Timing lives in its own
//! top-level field so report bodies are byte-identical across runs with the
//! same input, configuration, and seed.

use crate::extract::{
    AnchorScore, ExtractConfig, ExtractionResult, SearchMode, WitnessStats,
};
use crate::grid::TransverseSet;
use crate::linalg::VecP;
use crate::variety::{BilinearVariety, ContainmentCertificate};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 of the set's canonical JSON, as lowercase hex.
pub fn digest_set(a: &TransverseSet) -> String {
    let mut hasher = Sha256::new();
    hasher.update(a.to_json().as_bytes());
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in out {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

#[derive(Debug, Clone, Serialize)]
pub struct InputSummary {
    pub digest_sha256: String,
    pub p: u16,
    pub n_g: u16,
    pub n_h: u16,
    pub members: u64,
    pub cells: u64,
    pub density: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub eps: f64,
    pub seed: u64,
    pub mode: String,
    pub anchor_budget: u64,
    pub near_hom_cap: f64,
    pub fallback: bool,
    pub cert_samples: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularitySummary {
    pub u_dim: usize,
    pub v_dim: usize,
    pub u_codim: usize,
    pub v_codim: usize,
    pub d: usize,
    pub d0_formula: u32,
    pub d0_tight: u32,
    pub y0: VecP,
    pub x0: VecP,
    pub iterations: u32,
    pub exact_slices: u64,
    pub exact_pairs: u64,
    pub u_size: u64,
    pub slice_exception_fraction: f64,
    pub pair_exception_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureSummary {
    pub d: usize,
    pub anchor: AnchorScore,
    pub anchor_fraction: f64,
    pub good_points: u64,
    pub group_size: u64,
    pub good_fraction: f64,
    pub pairs_used: u64,
    pub skipped_quads: u64,
    pub measured_eps: f64,
    pub profile_eps: f64,
    pub reported_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarietySummary {
    pub u_basis: Vec<VecP>,
    pub v_basis: Vec<VecP>,
    /// Row-major digit matrices, one per form.
    pub forms: Vec<Vec<Vec<u8>>>,
    pub r: usize,
    pub u_codim: usize,
    pub v_codim: usize,
    pub codimension: usize,
    pub density_bound: f64,
}

impl VarietySummary {
    fn of(w: &BilinearVariety) -> Self {
        let g = w.ambient().g();
        let h = w.ambient().h();
        let forms = w
            .beta()
            .forms()
            .iter()
            .map(|m| {
                (0..usize::from(g.n()))
                    .map(|i| (0..usize::from(h.n())).map(|j| m.get(i, j)).collect())
                    .collect()
            })
            .collect();
        VarietySummary {
            u_basis: w.u().basis().to_vec(),
            v_basis: w.v().basis().to_vec(),
            forms,
            r: w.beta().r(),
            u_codim: w.u().codim(),
            v_codim: w.v().codim(),
            codimension: w.codimension(),
            density_bound: w.density_bound(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateSummary {
    pub mode: String,
    pub member_cells: Option<u64>,
    pub checked: Option<u64>,
    pub attempted: Option<u64>,
}

impl CertificateSummary {
    fn of(c: &ContainmentCertificate) -> Self {
        match *c {
            ContainmentCertificate::Exhaustive { member_cells } => CertificateSummary {
                mode: "exhaustive".into(),
                member_cells: Some(member_cells),
                checked: None,
                attempted: None,
            },
            ContainmentCertificate::Sampled { checked, attempted } => CertificateSummary {
                mode: "sampled".into(),
                member_cells: None,
                checked: Some(checked),
                attempted: Some(attempted),
            },
        }
    }
}

/// Everything deterministic about an extraction run.
#[derive(Debug, Clone, Serialize)]
pub struct ReportBody {
    pub schema: String,
    pub input: InputSummary,
    pub config: ConfigEcho,
    pub regularity: RegularitySummary,
    pub structure: Option<StructureSummary>,
    pub variety: VarietySummary,
    pub certificate: CertificateSummary,
    pub witness: WitnessStats,
    pub fallback_used: bool,
    pub main_path_failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractionReport {
    pub body: ReportBody,
    /// Stage label and wall-clock milliseconds; the only run-dependent field.
    pub timing_millis: Vec<(String, f64)>,
}

impl ExtractionReport {
    pub fn new(a: &TransverseSet, config: &ExtractConfig, out: &ExtractionResult) -> Self {
        let (members, cells) = a.density();
        let reg = &out.regularity;
        let usz = reg.u_size as f64;
        let body = ReportBody {
            schema: "extraction-report/1".into(),
            input: InputSummary {
                digest_sha256: digest_set(a),
                p: a.ambient().p(),
                n_g: a.ambient().g().n(),
                n_h: a.ambient().h().n(),
                members,
                cells,
                density: members as f64 / cells as f64,
            },
            config: ConfigEcho {
                eps: config.eps,
                seed: config.seed,
                mode: match config.mode {
                    SearchMode::Sampled { retries } => format!("sampled:{retries}"),
                    SearchMode::Exhaustive => "exhaustive".into(),
                },
                anchor_budget: config.anchor_budget,
                near_hom_cap: config.near_hom_cap,
                fallback: config.fallback,
                cert_samples: config.cert_samples,
            },
            regularity: RegularitySummary {
                u_dim: reg.u.dim(),
                v_dim: reg.v.dim(),
                u_codim: reg.u.codim(),
                v_codim: reg.v.codim(),
                d: reg.d,
                d0_formula: reg.d0_formula,
                d0_tight: reg.d0_tight,
                y0: reg.y0,
                x0: reg.x0,
                iterations: reg.iterations,
                exact_slices: reg.exact_slices,
                exact_pairs: reg.exact_pairs,
                u_size: reg.u_size,
                slice_exception_fraction: 1.0 - reg.exact_slices as f64 / usz,
                pair_exception_fraction: 1.0 - reg.exact_pairs as f64 / (usz * usz),
            },
            structure: out.structure.as_ref().map(|st| StructureSummary {
                d: st.d,
                anchor: st.anchor,
                anchor_fraction: st.anchor.fraction(),
                good_points: st.good_set.len() as u64,
                group_size: st.group_size,
                good_fraction: st.good_fraction,
                pairs_used: st.pairs_used,
                skipped_quads: st.skipped_quads,
                measured_eps: st.measured_eps,
                profile_eps: st.profile_eps,
                reported_bound: st.reported_bound,
            }),
            variety: VarietySummary::of(&out.variety),
            certificate: CertificateSummary::of(&out.certificate),
            witness: out.witness,
            fallback_used: out.fallback_used,
            main_path_failure: out.main_path_failure.clone(),
        };
        ExtractionReport {
            body,
            timing_millis: out
                .stage_millis
                .iter()
                .map(|&(label, ms)| (label.to_string(), ms))
                .collect(),
        }
    }

    /// Full report, timing included.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The deterministic part only; equal inputs, config, and seed give equal
    /// bytes.
    pub fn body_json(&self) -> String {
        serde_json::to_string_pretty(&self.body).expect("report body serializes")
    }
}
