use super::config::ExperimentConfig;
use super::study::{Models, Study};
use crate::attacks::{privacy_sweep, SweepConfig, SweepRow, TvConfig};
use crate::error::{Error, Result};
use crate::metrics::{dice_report, icc_test_retest, reid_retrieval, similarity_matrix, DiceReport, IccReport, MetricReport, MsSsimConfig};
use crate::mixer::{mix_image, naive_unmix, sample_alpha, AlphaBounds, ReferencePool};
use crate::models::{unmix_net_apply, OracleAccess, SegmentationBackend, UnmixNet};
use crate::parallel::par_map;
use crate::seeds::{child_seed, rng_from, Stream};
use crate::tensor::{extract_label_patches, extract_patches, reassemble, LabelField, Patch, PatchGrid, Volume};

type Scan = (Volume<f32>, LabelField<f32>);

/// Per-volume Dice for each ensemble size, for both decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct TtaCurves {
    pub ks: Vec<usize>,
    /// `naive[j][v]`: volume `v` decoded naively with `ks[j]` references.
    pub naive: Vec<Vec<DiceReport>>,
    pub learned: Option<Vec<Vec<DiceReport>>>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl TtaCurves {
    fn column(&self, naive: bool, k: usize) -> Option<&Vec<DiceReport>> {
        let j = self.ks.iter().position(|&x| x == k)?;
        if naive {
            Some(&self.naive[j])
        } else {
            self.learned.as_ref().map(|l| &l[j])
        }
    }

    /// Mean macro Dice over volumes.
    pub fn macro_mean(&self, naive: bool, k: usize) -> Option<f64> {
        self.column(naive, k).map(|c| mean(c.iter().map(|d| d.macro_avg)))
    }

    pub fn per_volume(&self, naive: bool, k: usize) -> Option<Vec<f64>> {
        self.column(naive, k).map(|c| c.iter().map(|d| d.macro_avg).collect())
    }
}

struct Accum {
    sum: Vec<f64>,
}

impl Accum {
    fn add(&mut self, y: &LabelField<f32>) {
        for (s, v) in self.sum.iter_mut().zip(y.data()) {
            *s += *v as f64;
        }
    }

    fn mean(&self, classes: usize, dims: [usize; 3], k: usize) -> Result<LabelField<f32>> {
        LabelField::project_simplex(classes, dims, self.sum.iter().map(|s| (s / k as f64) as f32).collect())
    }
}

/// Runs the mixing pipeline in process on every test volume with up to `max(ks)` references
/// per patch. Each volume gets one alpha (drawn from `alpha_seed`, so runs that share it
/// differ only in their references); the first `k` references form the size-`k` ensemble,
/// so all sizes share the same server outputs.
pub fn tta_curves(
    backend: &SegmentationBackend<f32>,
    unmix: Option<&UnmixNet<f32>>,
    test: &[Scan],
    pool: &ReferencePool<f32>,
    grid: &PatchGrid,
    bounds: AlphaBounds,
    ks: &[usize],
    alpha_seed: u64,
    seed: u64,
) -> Result<TtaCurves> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let kmax = *ks.last().ok_or_else(|| Error::config("no ensemble sizes requested"))?;
    let per_volume = par_map(test, |i, (vol, labels)| -> Result<(Vec<DiceReport>, Option<Vec<DiceReport>>)> {
        let alpha = sample_alpha(&mut rng_from(child_seed(alpha_seed, Stream::Mix, i as u64)), bounds)?;
        let mut rng = rng_from(child_seed(seed, Stream::Mix, i as u64));
        let patches = extract_patches(vol, grid)?;
        let label_patches = extract_label_patches(labels, grid)?;
        let classes = labels.classes();
        let (mut naive_out, mut learned_out) = (vec![Vec::new(); ks.len()], vec![Vec::new(); ks.len()]);
        for (patch, lab) in patches.iter().zip(&label_patches) {
            let key = pool.draw_key(&mut rng, grid.patch_dims(), alpha, bounds, kmax)?;
            let n = classes * patch.data.len();
            let mut naive = Accum { sum: vec![0.0; n] };
            let mut learned = Accum { sum: vec![0.0; n] };
            let mut next = 0;
            for (r, reference) in key.references().iter().enumerate() {
                let x_mix = mix_image(&patch.data, &reference.image, alpha)?;
                let access = OracleAccess { y_target: lab.data.clone(), y_ref: reference.labels.clone(), alpha };
                let y_hat = backend.segment_with(&x_mix, Some(&access))?;
                naive.add(&naive_unmix(&y_hat, &reference.labels, alpha, bounds.min)?);
                if let Some(net) = unmix {
                    learned.add(&unmix_net_apply(net, &y_hat, &reference.labels, alpha)?);
                }
                while next < ks.len() && ks[next] == r + 1 {
                    let dims = patch.data.dims();
                    naive_out[next].push(Patch { origin: patch.origin, data: naive.mean(classes, dims, r + 1)? });
                    if unmix.is_some() {
                        learned_out[next].push(Patch { origin: patch.origin, data: learned.mean(classes, dims, r + 1)? });
                    }
                    next += 1;
                }
            }
        }
        let score = |parts: &Vec<Patch<LabelField<f32>>>| dice_report(&reassemble(parts, vol.dims())?, labels);
        let naive = naive_out.iter().map(score).collect::<Result<Vec<_>>>()?;
        let learned = if unmix.is_some() { Some(learned_out.iter().map(score).collect::<Result<Vec<_>>>()?) } else { None };
        log::debug!("volume {i}: alpha {alpha:.3}");
        Ok((naive, learned))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let transpose = |get: &dyn Fn(&(Vec<DiceReport>, Option<Vec<DiceReport>>)) -> Option<Vec<DiceReport>>| -> Option<Vec<Vec<DiceReport>>> {
        let cols: Option<Vec<Vec<DiceReport>>> = per_volume.iter().map(get).collect();
        cols.map(|cols| (0..ks.len()).map(|j| cols.iter().map(|c| c[j].clone()).collect()).collect())
    };
    let naive = transpose(&|v| Some(v.0.clone())).expect("naive always present");
    let learned = transpose(&|v| v.1.clone());
    Ok(TtaCurves { ks, naive, learned })
}

/// Dice of the backend applied to raw (unmixed) test volumes.
pub fn raw_dice(backend: &SegmentationBackend<f32>, test: &[Scan], grid: &PatchGrid) -> Result<Vec<DiceReport>> {
    par_map(test, |_, (vol, labels)| {
        let patches = extract_patches(vol, grid)?;
        let label_patches = extract_label_patches(labels, grid)?;
        let preds = patches
            .iter()
            .zip(&label_patches)
            .map(|(p, l)| {
                let access = OracleAccess { y_target: l.data.clone(), y_ref: l.data.clone(), alpha: 1.0 };
                Ok(Patch { origin: p.origin, data: backend.segment_with(&p.data, Some(&access))? })
            })
            .collect::<Result<Vec<_>>>()?;
        dice_report(&reassemble(&preds, vol.dims())?, labels)
    })
    .into_iter()
    .collect()
}

/// Per-volume alphas are shared by every stage of a run.
fn alpha_seed(cfg: &ExperimentConfig) -> u64 {
    child_seed(cfg.seed, Stream::Mix, 0)
}

pub fn inference_grid(cfg: &ExperimentConfig) -> Result<PatchGrid> {
    PatchGrid::new([cfg.phantom.dims; 3], [cfg.patch; 3], [cfg.stride; 3])
}

fn dice_row(report: &mut MetricReport, csv: &mut Vec<Vec<String>>, name: &str, vols: &[DiceReport]) {
    let classes = vols.first().map_or(0, |d| d.per_class.len());
    let mut row = vec![name.to_string()];
    for c in 1..classes {
        let v = mean(vols.iter().map(|d| d.per_class[c]));
        report.set_f64(format!("{name}.class{c}"), v);
        row.push(v.to_string());
    }
    let avg = mean(vols.iter().map(|d| d.macro_avg));
    report.set_f64(format!("{name}.avg"), avg);
    row.push(avg.to_string());
    csv.push(row);
}

/// Results of the segmentation table: the report, CSV rows and the curves behind them.
#[derive(Debug, Clone)]
pub struct Table1 {
    pub report: MetricReport,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub curves: TtaCurves,
}

/// Dice for Baseline-on-raw, Naive, Naive+TTA, Learned and Learned+TTA.
/// The `+TTA` rows use `tta.eval` references and are omitted when `tta.k` is empty.
pub fn run_table1_analogue(cfg: &ExperimentConfig, study: &Study, models: &Models) -> Result<Table1> {
    let grid = inference_grid(cfg)?;
    let with_tta = !cfg.tta.is_empty();
    let ks: Vec<usize> = if with_tta { vec![1, cfg.tta_eval] } else { vec![1] };
    let backend = models.backend(cfg)?;
    let curves = tta_curves(&backend, Some(&models.unmix), &study.test, &study.pool_a, &grid, cfg.alpha, &ks, alpha_seed(cfg), child_seed(cfg.seed, Stream::Eval, 0))?;
    let raw = raw_dice(&models.baseline_backend(cfg)?, &study.test, &grid)?;
    let mut report = MetricReport::new();
    report.set("table1.backend", backend.name());
    report.set("table1.volumes", study.test.len().to_string());
    report.set("table1.tta", cfg.tta_eval.to_string());
    let mut rows = Vec::new();
    dice_row(&mut report, &mut rows, "baseline_raw", &raw);
    dice_row(&mut report, &mut rows, "naive", curves.column(true, 1).expect("k=1"));
    if with_tta {
        dice_row(&mut report, &mut rows, "naive_tta", curves.column(true, cfg.tta_eval).expect("eval k"));
    }
    dice_row(&mut report, &mut rows, "learned", curves.column(false, 1).expect("k=1"));
    if with_tta {
        dice_row(&mut report, &mut rows, "learned_tta", curves.column(false, cfg.tta_eval).expect("eval k"));
    }
    let classes = raw.first().map_or(0, |d| d.per_class.len());
    let mut header = vec!["method".to_string()];
    header.extend((1..classes).map(|c| format!("class{c}")));
    header.push("avg".into());
    Ok(Table1 { report, header, rows, curves })
}

/// Mean macro Dice per ensemble size over the test split: `(k, learned, naive)` rows.
pub fn run_fig3_analogue(cfg: &ExperimentConfig, study: &Study, models: &Models, ks: &[usize]) -> Result<Vec<(usize, f64, f64)>> {
    let mut list = ks.to_vec();
    list.sort_unstable();
    let before = list.len();
    list.dedup();
    if list.len() != before {
        log::warn!("duplicate TTA counts removed: {ks:?} -> {list:?}");
    }
    if list.is_empty() {
        return Ok(Vec::new());
    }
    let backend = models.backend(cfg)?;
    let curves = tta_curves(&backend, Some(&models.unmix), &study.test, &study.pool_a, &inference_grid(cfg)?, cfg.alpha, &list, alpha_seed(cfg), child_seed(cfg.seed, Stream::Eval, 1))?;
    Ok(list.iter().map(|&k| (k, curves.macro_mean(false, k).expect("k"), curves.macro_mean(true, k).expect("k"))).collect())
}

/// ICC between two learned-decoder runs whose references come from disjoint pools,
/// per foreground class and on the macro average.
pub fn reliability(cfg: &ExperimentConfig, study: &Study, models: &Models) -> Result<Vec<(String, IccReport)>> {
    let backend = models.backend(cfg)?;
    let grid = inference_grid(cfg)?;
    let run = |pool, stream_index| {
        tta_curves(&backend, Some(&models.unmix), &study.test, pool, &grid, cfg.alpha, &[cfg.icc_tta], alpha_seed(cfg), child_seed(cfg.seed, Stream::Eval, stream_index))
    };
    let a = run(&study.pool_a, 2)?;
    let b = run(&study.pool_b, 3)?;
    let (ca, cb) = (a.column(false, cfg.icc_tta).expect("k"), b.column(false, cfg.icc_tta).expect("k"));
    let classes = ca.first().map_or(0, |d| d.per_class.len());
    let mut out = Vec::new();
    for c in 1..classes {
        let xa: Vec<f64> = ca.iter().map(|d| d.per_class[c]).collect();
        let xb: Vec<f64> = cb.iter().map(|d| d.per_class[c]).collect();
        out.push((format!("class{c}"), icc_test_retest(&xa, &xb)?));
    }
    let xa: Vec<f64> = ca.iter().map(|d| d.macro_avg).collect();
    let xb: Vec<f64> = cb.iter().map(|d| d.macro_avg).collect();
    out.push(("avg".into(), icc_test_retest(&xa, &xb)?));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PrivacySuite {
    pub report: MetricReport,
    pub sweep: Vec<SweepRow>,
}

/// Attack recovery, re-identification for raw vs. mixed volumes, and reliability.
pub fn run_privacy_suite(cfg: &ExperimentConfig, study: &Study, models: &Models) -> Result<PrivacySuite> {
    let ssim = MsSsimConfig::default();
    let sweep_cfg = SweepConfig {
        alphas: cfg.privacy.alphas.clone(),
        attacks: cfg.privacy.attacks.clone(),
        patch: [cfg.patch; 3],
        patches_per_scan: cfg.privacy.patches_per_scan,
        library_size: cfg.privacy.library,
        tv: TvConfig { iterations: cfg.privacy.tv_iterations, tv_weight: cfg.privacy.tv_weight, ..Default::default() },
        ssim,
        seed: child_seed(cfg.seed, Stream::Attack, 0),
    };
    let sweep = privacy_sweep(&study.reid, &study.pool_a, &study.attacker, &sweep_cfg)?;
    let subjects: Vec<String> = study.reid.iter().map(|v| v.subject_id.clone()).collect();
    let raw = reid_retrieval(&subjects, &similarity_matrix(&study.reid, &ssim)?)?;
    let mut report = MetricReport::new();
    report.set("privacy.note", "classical attacks only; recovery scores are lower bounds on adversary strength");
    report.set_f64("privacy.raw.reid_f1", raw.f1);
    report.set_f64("privacy.raw.reid_map", raw.map);
    for row in &sweep {
        let p = format!("privacy.alpha{}", row.alpha);
        report.set_f64(format!("{p}.{}.ms_ssim_mean", row.attack.name()), row.mean_ms_ssim);
        report.set_f64(format!("{p}.{}.ms_ssim_std", row.attack.name()), row.std_ms_ssim);
        report.set_f64(format!("{p}.reid_f1"), row.reid_f1);
        report.set_f64(format!("{p}.reid_map"), row.reid_map);
    }
    if study.test.len() >= 5 {
        for (name, icc) in reliability(cfg, study, models)? {
            report.set_f64(format!("icc.{name}"), icc.icc);
            report.set_f64(format!("icc.{name}.lower"), icc.lower);
            report.set_f64(format!("icc.{name}.upper"), icc.upper);
        }
    } else {
        log::warn!("fewer than 5 test volumes; reliability skipped");
    }
    Ok(PrivacySuite { report, sweep })
}
