//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resynth::codebook::cluster;
use resynth::excitation::{local_energy, unvoiced_span_energies};
use resynth::io::encode_codebook;
use resynth::pipeline::rn_keys;
use resynth::synthetic;
use resynth::*;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

const RATE: u32 = 16000;
const MEGABYTE: usize = 1_000_000;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Shared {
    cfg: Config,
    trained: Trained,
    training_time: Duration,
    training_seconds: f64,
    held_out: Vec<Waveform>,
    keys: Vec<RnFrame>,
}

fn setup() -> Shared {
    let cfg = Config::default();
    let corpus: Vec<Waveform> =
        synthetic::corpus(30, 20.0, RATE, 1).unwrap().into_iter().map(|u| u.waveform).collect();
    let training_seconds = corpus.iter().map(Waveform::duration_secs).sum();
    let t0 = Instant::now();
    let trained = train(&corpus, 100, 10, 7, &cfg).unwrap();
    let training_time = t0.elapsed();
    let held_out = synthetic::corpus(10, 5.0, RATE, 1001).unwrap().into_iter().map(|u| u.waveform).collect();
    let frames: Vec<ResidualFrame> = trained.full.entries().iter().map(|e| e.frame.clone()).collect();
    let keys = rn_keys(&frames).unwrap();
    Shared { cfg, trained, training_time, training_seconds, held_out, keys }
}

fn footprint(s: &Shared) -> Outcome {
    let bytes = encode_codebook(&s.trained.compressed).map_err(|e| e.to_string())?.len();
    let minutes = s.training_seconds / 60.0;
    check(
        bytes <= MEGABYTE && minutes >= 10.0 && s.training_time <= Duration::from_secs(300),
        format!(
            "{bytes} bytes for k=100 N=10 from {minutes:.1} min of speech ({} frames), trained in {:.1} s",
            s.trained.frame_count,
            s.training_time.as_secs_f64()
        ),
    )
}

fn rn_normalization(s: &Shared) -> Outcome {
    let mut worst = 0.0f64;
    for k in &s.keys {
        assert_eq!(k.coeffs().len(), 20);
        worst = worst.max((k.coeffs().iter().map(|v| v * v).sum::<f64>() - 1.0).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = 0;
    let mut scale_err = 0.0f64;
    for e in s.trained.full.entries().iter().step_by(50) {
        let f = &e.frame;
        let scaled = |g: f64| {
            let x: Vec<f64> = f.samples().iter().map(|v| g * v).collect();
            ResidualFrame::new(x, f.period(), g * g * f.energy(), f.source()).unwrap()
        };
        if rn(&scaled(2f64.powi(rng.random_range(-30..30)))).unwrap() == e.key {
            exact += 1;
        }
        let g = rn(&scaled(rng.random_range(1e-3..1e3))).unwrap();
        for (a, b) in g.coeffs().iter().zip(e.key.coeffs()) {
            scale_err = scale_err.max((a - b).abs());
        }
    }
    let tried = s.trained.full.len().div_ceil(50);
    check(
        worst <= 1e-9 && exact == tried && scale_err <= 1e-12,
        format!(
            "{} frames, max |energy-1| {worst:.1e}; power-of-two scaling exact {exact}/{tried}, arbitrary scaling max diff {scale_err:.1e}",
            s.keys.len()
        ),
    )
}

fn filter_round_trip(s: &Shared) -> Outcome {
    let skip = 2 * s.cfg.lpc_order;
    let mut worst_snr = f64::INFINITY;
    let mut worst_time = 0.0f64;
    for w in &s.held_out {
        let t0 = Instant::now();
        let env = analyze(w, &s.cfg).unwrap().envelope;
        let back = synth_filter(&inverse_filter(w, &env).unwrap(), &env).unwrap();
        let per_5s = t0.elapsed().as_secs_f64() * 5.0 / w.duration_secs();
        let sig: f64 = w.samples()[skip..].iter().map(|x| x * x).sum();
        let err: f64 =
            w.samples()[skip..].iter().zip(&back.samples()[skip..]).map(|(x, y)| (x - y) * (x - y)).sum();
        worst_snr = worst_snr.min(10.0 * (sig / err).log10());
        worst_time = worst_time.max(per_5s);
    }
    check(
        worst_snr >= 40.0 && worst_time <= 1.0,
        format!("worst SNR {worst_snr:.1} dB, slowest {worst_time:.3} s per 5 s (analysis included)"),
    )
}

fn gci_accuracy(s: &Shared) -> Outcome {
    let edge = 640;
    let (mut hit, mut total) = (0, 0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let period = rng.random_range(40.0..200.0);
        let u = synthetic::pulse_train_ar(RATE as usize, RATE, period, 0.05, seed).unwrap();
        let a = analyze(&u.waveform, &s.cfg).unwrap();
        let found = a.gcis.positions();
        for &g in u.gcis.iter().filter(|&&g| g >= edge && g + edge <= u.waveform.len()) {
            total += 1;
            let i = found.partition_point(|&d| d + 4 < g);
            if i < found.len() && found[i] <= g + 4 {
                hit += 1;
            }
        }
    }
    let rate = hit as f64 / total as f64;
    check(rate >= 0.95, format!("{hit}/{total} = {:.2}% within 4 samples over 100 seeds", 100.0 * rate))
}

fn self_reconstruction(s: &Shared) -> Outcome {
    let mut worst_err = 0.0f64;
    let mut worst_snr = f64::INFINITY;
    for w in &s.held_out {
        let frames = analyze(w, &s.cfg).unwrap().frames;
        let cb = full_codebook(&frames, RATE, [0; 32]).unwrap();
        let (_, m) = copy_synthesis(w, Some(&cb), SynthesisMode::Full, 0, &s.cfg).unwrap();
        worst_err = worst_err.max(m.mean_rn_selection_error);
        worst_snr = worst_snr.min(m.voiced_segmental_snr_db);
    }
    check(
        worst_err == 0.0 && worst_snr >= 20.0,
        format!("max selection error {worst_err:e}, worst voiced segmental SNR {worst_snr:.1} dB"),
    )
}

fn ordering(s: &Shared) -> Outcome {
    let mut lsd = [0.0; 3];
    let mut err = [0.0; 3];
    let n = s.held_out.len() as f64;
    for w in &s.held_out {
        let runs = [
            (Some(&s.trained.full), SynthesisMode::Full),
            (Some(&s.trained.compressed), SynthesisMode::Compressed),
            (None, SynthesisMode::Pulse),
        ];
        for (i, (cb, mode)) in runs.into_iter().enumerate() {
            let (_, m) = copy_synthesis(w, cb, mode, 0, &s.cfg).unwrap();
            lsd[i] += m.log_spectral_distortion_db / n;
            err[i] += m.mean_rn_selection_error / n;
        }
    }
    check(
        lsd[0] <= lsd[1] && lsd[1] <= lsd[2] && err[0] <= err[1],
        format!(
            "LSD full {:.2} / compressed {:.2} / pulse {:.2} dB; RN error full {:.5} / compressed {:.5} over {} utterances",
            lsd[0],
            lsd[1],
            lsd[2],
            err[0],
            err[1],
            s.held_out.len()
        ),
    )
}

fn kmeans_properties(s: &Shared) -> Outcome {
    let mut runs = 0;
    let mut rises = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..20u64 {
        let k = rng.random_range(1..120);
        let km = cluster(&s.keys, k, seed).unwrap();
        runs += 1;
        rises += km.distortion_history.windows(2).filter(|w| w[1] > w[0]).count();
        if seed < 3 && km != cluster(&s.keys, k, seed).unwrap() {
            return Err(format!("k={k} seed={seed} not reproducible"));
        }
    }
    let one = cluster(&s.keys, 1, 0).unwrap();
    let n = s.keys.len() as f64;
    let mut mean_err = 0.0f64;
    for d in 0..RN_LEN {
        let mean = s.keys.iter().map(|k| k.coeffs()[d]).sum::<f64>() / n;
        mean_err = mean_err.max((one.centroids[0][d] - mean).abs());
    }
    check(
        rises == 0 && mean_err <= 1e-12,
        format!("{runs} runs on {} keys, {rises} distortion increases, k=1 mean error {mean_err:.1e}", s.keys.len()),
    )
}

fn selection_oracle(s: &Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let entries = s.trained.full.entries();
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let size = rng.random_range(1..64);
        let start = rng.random_range(0..entries.len() - size);
        let cb = Codebook::new(entries[start..start + size].to_vec(), CodebookKind::Full, *s.trained.full.meta())
            .unwrap();
        let target = if rng.random_bool(0.5) {
            s.keys[rng.random_range(0..s.keys.len())]
        } else {
            let mut v = [0.0; RN_LEN];
            v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            RnFrame::normalized(v).unwrap()
        };
        let mut best = (f64::INFINITY, 0);
        for (i, e) in cb.entries().iter().enumerate() {
            let d: f64 =
                e.key.coeffs().iter().zip(target.coeffs()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 20.0;
            if d < best.0 {
                best = (d, i);
            }
        }
        if select(&cb, &target).0 != best.1 {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches in 10000 cases"))
}

fn pca(s: &Shared) -> Outcome {
    let model = s.trained.pca.as_ref().ok_or("no PCA model")?;
    let mut ortho = 0.0f64;
    for (i, a) in model.basis().iter().enumerate() {
        for (j, b) in model.basis().iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            ortho = ortho.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let mut round = 0.0f64;
    for k in s.keys.iter().step_by(7) {
        let back = model.decode(&model.encode(k));
        for (x, y) in k.coeffs().iter().zip(&back) {
            round = round.max((x - y).abs());
        }
    }
    let n = s.keys.len() as f64;
    let mut trace = 0.0;
    for d in 0..RN_LEN {
        let m = s.keys.iter().map(|k| k.coeffs()[d]).sum::<f64>() / n;
        trace += s.keys.iter().map(|k| (k.coeffs()[d] - m).powi(2)).sum::<f64>() / (n - 1.0);
    }
    let sum: f64 = model.eigenvalues().iter().sum();
    let first = model.eigen_frame(0).unwrap();
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("eigen_rnframe_0.csv");
    let line = first.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",");
    std::fs::write(&out, format!("{line}\n")).unwrap();
    check(
        ortho <= 1e-9 && round <= 1e-9 && (sum - trace).abs() <= 1e-9,
        format!(
            "orthonormality {ortho:.1e}, round trip {round:.1e}, |sum(eig) - trace| {:.1e}; first eigen-RN frame [{line}] written to {}",
            (sum - trace).abs(),
            out.display()
        ),
    )
}

fn energy_contracts(s: &Shared) -> Outcome {
    let mut unvoiced = 0.0f64;
    let mut adapted = 0.0f64;
    let mut ola_worst = 0.0f64;
    let mut ola_count = 0;
    let (mut all_worst, mut all_count, mut all_outside) = (0.0f64, 0, 0);
    for (u, w) in s.held_out.iter().enumerate() {
        let a = analyze(w, &s.cfg).unwrap();
        let (x, _) = build_excitation(&a.track, Some(&s.trained.compressed), ExcitationMode::Codebook, u as u64)
            .unwrap();
        for (got, want) in unvoiced_span_energies(&a.track, x.samples()) {
            if want > 0.0 {
                unvoiced = unvoiced.max((got - want).abs() / want);
            }
        }
        let ev = a.track.events();
        for span in a.track.spans().iter().filter(|sp| sp.voiced) {
            for i in span.events.start + 1..span.events.end.saturating_sub(1) {
                let Event::Voiced { position, period, energy, target } = &ev[i] else { continue };
                let (_, entry) = select(&s.trained.compressed, target);
                let f = adapt(&entry.frame, *period, *energy).unwrap();
                adapted = adapted.max((frame_energy(&f) - energy).abs() / energy);
                let db = (10.0 * (local_energy(x.samples(), *position, *period) / energy).log10()).abs();
                all_worst = all_worst.max(db);
                all_count += 1;
                if db > 3.0 {
                    all_outside += 1;
                }
                // Steady: both neighbours one period away and of similar energy.
                let steady = [&ev[i - 1], &ev[i + 1]].iter().all(|n| {
                    let gap = n.position().abs_diff(*position) as f64;
                    let ratio = n.energy() / energy;
                    (gap - *period as f64).abs() <= 0.1 * *period as f64 && (0.5..=2.0).contains(&ratio)
                });
                if steady {
                    ola_worst = ola_worst.max(db);
                    ola_count += 1;
                }
            }
        }
    }
    check(
        unvoiced <= 1e-9 && adapted <= 1e-9 && ola_worst <= 3.0,
        format!(
            "unvoiced relative error {unvoiced:.1e}, adapted frame relative error {adapted:.1e}, \
             overlap-add worst deviation {ola_worst:.2} dB over {ola_count} steady voiced events \
             (all {all_count} interior events: worst {all_worst:.2} dB, {all_outside} beyond 3 dB)"
        ),
    )
}

fn run_cli(threads: &str, args: &[&str]) -> Vec<u8> {
    let o = Command::new(env!("CARGO_BIN_EXE_resynth"))
        .env("RAYON_NUM_THREADS", threads)
        .args(args)
        .output()
        .unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o.stdout
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let collect = |tag: &str, threads: &str| -> Vec<Vec<u8>> {
        let root = dir.path().join(tag);
        let corpus = root.join("corpus");
        std::fs::create_dir_all(&corpus).unwrap();
        let p = |n: &str| root.join(n).to_str().unwrap().to_string();
        let c = corpus.to_str().unwrap().to_string();
        let u = corpus.join("utt0001.wav").to_str().unwrap().to_string();
        let mut out = Vec::new();
        let steps: Vec<Vec<String>> = vec![
            vec!["gen-corpus", "--out", &c, "--count", "4", "--seconds", "3", "--seed", "9"],
            vec!["train", "--corpus", &c, "--out", &p("cb.rscb"), "--k", "20", "--n", "5", "--seed", "2", "--full-out", &p("full.rscb")],
            vec!["analyze", "--in", &u, "--track-out", &p("x.trk")],
            vec!["synth", "--track", &p("x.trk"), "--codebook", &p("cb.rscb"), "--out", &p("s.wav"), "--seed", "3"],
            vec!["synth", "--track", &p("x.trk"), "--pulse", "--out", &p("sp.wav"), "--seed", "3"],
            vec!["copy-synth", "--in", &u, "--codebook", &p("full.rscb"), "--mode", "full", "--out", &p("f.wav"), "--report", &p("f.txt")],
            vec!["copy-synth", "--in", &u, "--codebook", &p("cb.rscb"), "--mode", "compressed", "--out", &p("c.wav"), "--seed", "4"],
            vec!["copy-synth", "--in", &u, "--mode", "pulse", "--out", &p("p.wav"), "--seed", "4"],
            vec!["pca", "--codebook", &p("cb.rscb"), "--eigen-out", &p("eig.csv")],
            vec!["metrics", "--ref", &u, "--test", &p("c.wav")],
        ]
        .into_iter()
        .map(|v| v.into_iter().map(str::to_string).collect())
        .collect();
        for args in &steps {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            out.push(run_cli(threads, &refs));
        }
        for name in ["cb.rscb", "full.rscb", "x.trk", "s.wav", "sp.wav", "f.wav", "f.txt", "c.wav", "p.wav", "eig.csv"] {
            out.push(std::fs::read(root.join(name)).unwrap());
        }
        for i in 0..4 {
            out.push(std::fs::read(corpus.join(format!("utt{i:04}.wav"))).unwrap());
        }
        out
    };
    let a = collect("a", "1");
    let b = collect("b", "4");
    let c = collect("c", "4");
    let differing = (0..a.len()).filter(|&i| a[i] != b[i] || b[i] != c[i]).count();
    check(
        differing == 0,
        format!("{} outputs from 10 commands compared across runs with 1 and 4 threads, {differing} differ", a.len()),
    )
}

fn main() {
    let started = Instant::now();
    let shared = setup();
    let criteria: Vec<Criterion> = vec![
        ("1 footprint", Box::new(|| footprint(&shared))),
        ("2 RN dimension and normalization", Box::new(|| rn_normalization(&shared))),
        ("3 filter round trip", Box::new(|| filter_round_trip(&shared))),
        ("4 GCI accuracy", Box::new(|| gci_accuracy(&shared))),
        ("5 self-reconstruction", Box::new(|| self_reconstruction(&shared))),
        ("6 quality ordering", Box::new(|| ordering(&shared))),
        ("7 k-means properties", Box::new(|| kmeans_properties(&shared))),
        ("8 selection oracle", Box::new(|| selection_oracle(&shared))),
        ("9 PCA", Box::new(|| pca(&shared))),
        ("10 energy contracts", Box::new(|| energy_contracts(&shared))),
        ("11 CLI determinism", Box::new(cli_determinism)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
