use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use nsbvp::cylinder::{solve_bvp, index_strip, CylinderField, CylinderProblem, SmoothField, TimeGrid};
use nsbvp::discretize::FourierOperator;
use nsbvp::examples::{spectrum_csv, tilted_dirac_spectrum};
use nsbvp::fredpair::{adjoint_condition, extract_elliptic_decomposition, fp_decomposition_check};
use nsbvp::io::{example_operator, matrix_from_json, operator_symbol, read_json, solution_csv, with_header, BcFile, OperatorFile, ProblemFile};
use nsbvp::linalg::{eye, spectral_norm, sort_complex, Tolerances};
use nsbvp::sobolev::cut_independence_report;
use nsbvp::speccalc::{adjoint_split_consistency, find_cuts, spectral_split_contour, ContourQuad, SpectralCut, SpectralSplit};
use nsbvp::symbols::{bisector_angle, symbol_eig_structure, SampleGrid};
use nsbvp::{Error, Result};

use crate::{Cli, Command};

#[derive(Serialize)]
struct Header {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_hash: String,
    seed: u64,
    modes: usize,
    cut: Option<f64>,
}

/// Hash of every input that affects the numbers: flags and file contents, not `--out` or `--threads`.
fn config_hash(cli: &Cli) -> Result<String> {
    let mut h = Sha256::new();
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())));
    let files: Vec<&Path> = match &cli.command {
        Command::BcCheck { bc } => vec![bc.as_path()],
        Command::Solve { problem } => vec![problem.as_path()],
        _ => Vec::new(),
    };
    let config = json!({
        "command": cli.command,
        "op": cli.op.as_ref().map(|p| p.display().to_string()),
        "example": cli.example, "alpha": cli.alpha, "modes": cli.modes, "cut": cli.cut,
        "cut2": cli.cut2, "rho": cli.rho, "grid": cli.grid, "tol_rank": cli.tol_rank, "seed": cli.seed,
    });
    h.update(config.to_string().as_bytes());
    if let Some(p) = &cli.op {
        h.update(read(p)?);
    }
    for p in files {
        h.update(read(p)?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

struct Context<'a> {
    cli: &'a Cli,
    hash: String,
}

impl Context<'_> {
    fn header(&self, cut: Option<f64>) -> Header {
        let command = serde_json::to_value(&self.cli.command)
            .ok()
            .and_then(|v| v.get("command").and_then(|n| n.as_str()).map(str::to_string))
            .unwrap_or_default();
        Header {
            tool: "nsbvp",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: self.hash.clone(),
            seed: self.cli.seed,
            modes: self.cli.modes,
            cut,
        }
    }

    /// Writes `<stem>.csv` files and `<command>.json` under `--out`; returns the report.
    fn emit(&self, cut: Option<f64>, tables: &[(&str, String)], body: Value) -> Result<Value> {
        let header = self.header(cut);
        let mut report = json!({ "header": header });
        if let (Value::Object(r), Value::Object(b)) = (&mut report, body) {
            r.extend(b);
        }
        if let Some(dir) = &self.cli.out {
            std::fs::create_dir_all(dir)?;
            for (stem, csv) in tables {
                std::fs::write(dir.join(format!("{stem}.csv")), with_header(&header, csv)?)?;
            }
            let pretty = serde_json::to_string_pretty(&report)?;
            std::fs::write(dir.join(format!("{}.json", header.command)), pretty + "\n")?;
        }
        Ok(report)
    }
}

fn load_operator(cli: &Cli) -> Result<FourierOperator> {
    if cli.modes == 0 {
        return Err(Error::Invalid("--modes must be positive".into()));
    }
    match &cli.op {
        Some(p) => read_json::<OperatorFile>(p)?.build(cli.modes),
        None => example_operator(&cli.example, cli.alpha, cli.modes),
    }
}

fn tolerances(cli: &Cli) -> Result<Tolerances> {
    if !(cli.tol_rank > 0.0) {
        return Err(Error::Invalid("--tol-rank must be positive".into()));
    }
    Ok(Tolerances { rank_factor: cli.tol_rank, ..Tolerances::default() })
}

fn resolve_cut(cli: &Cli, op: &FourierOperator) -> Result<SpectralCut> {
    if cli.cut == "auto" {
        let cuts = find_cuts(op, (f64::NEG_INFINITY, f64::INFINITY))?;
        return cuts
            .into_iter()
            .min_by(|a, b| a.r.abs().total_cmp(&b.r.abs()).then(a.r.total_cmp(&b.r)))
            .ok_or(Error::NoGapInWindow { lo: f64::NEG_INFINITY, hi: f64::INFINITY });
    }
    let r: f64 = cli.cut.parse().map_err(|_| Error::Invalid(format!("--cut expects a number or auto, got '{}'", cli.cut)))?;
    SpectralCut::for_operator(op, r)
}

fn second_cut(cli: &Cli) -> Result<f64> {
    cli.cut2.ok_or_else(|| Error::Invalid("--cut2 is required".into()))
}

fn split_for(cli: &Cli, op: &FourierOperator) -> Result<SpectralSplit> {
    SpectralSplit::new(op, resolve_cut(cli, op)?, &tolerances(cli)?)
}

pub fn run(cli: &Cli) -> Result<Value> {
    let ctx = Context { cli, hash: config_hash(cli)? };
    match &cli.command {
        Command::Spectrum => spectrum(&ctx),
        Command::Projector => projector(&ctx),
        Command::Checkspace { samples } => checkspace(&ctx, *samples),
        Command::BcCheck { bc } => bc_check(&ctx, bc),
        Command::Solve { problem } => solve(&ctx, problem),
        Command::Index => index(&ctx),
        Command::Example { name } => example(&ctx, name),
    }
}

fn mode_label(mode: Option<[i64; 2]>) -> String {
    let k = mode.unwrap_or([0, 0]);
    format!("{},{}", k[0], k[1])
}

fn spectrum(ctx: &Context) -> Result<Value> {
    let op = load_operator(ctx.cli)?;
    let tols = tolerances(ctx.cli)?;
    let mut csv = String::from("k1,k2,re,im,algebraic,geometric\n");
    let (mut count, mut clusters, mut max_defect) = (0usize, 0usize, 0usize);
    let (mut re_lo, mut re_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (blk, mode) in op.matrix.blocks().iter().zip(op.block_modes()) {
        for c in symbol_eig_structure(blk, &tols)? {
            csv.push_str(&format!(
                "{},{:.12e},{:.12e},{},{}\n",
                mode_label(mode),
                c.value.re,
                c.value.im,
                c.algebraic,
                c.geometric
            ));
            count += c.algebraic;
            clusters += 1;
            max_defect = max_defect.max(c.algebraic - c.geometric);
            re_lo = re_lo.min(c.value.re);
            re_hi = re_hi.max(c.value.re);
        }
    }
    let sym = operator_symbol(&op);
    let bis = bisector_angle(&sym, &SampleGrid::default_for(&sym))?;
    ctx.emit(
        None,
        &[("spectrum", csv)],
        json!({
            "dim": op.dim(),
            "eigenvalues": count,
            "clusters": clusters,
            "max_jordan_defect": max_defect,
            "real_part_range": [re_lo, re_hi],
            "bisector": { "nu": bis.nu, "min_real_gap": bis.min_real_gap },
        }),
    )
}

fn projector(ctx: &Context) -> Result<Value> {
    let op = load_operator(ctx.cli)?;
    let split = split_for(ctx.cli, &op)?;
    let quad = ContourQuad::default();
    let contour = spectral_split_contour(&op, &split.cut, &quad)?;
    let mut csv = String::from("k1,k2,rank_plus,rank_minus,contour_deviation\n");
    let mut deviation = 0.0f64;
    for (((p, m), q), mode) in split
        .chi_plus
        .blocks()
        .iter()
        .zip(split.chi_minus.blocks())
        .zip(contour.projector.blocks())
        .zip(op.block_modes())
    {
        let d = spectral_norm(&(q - p));
        deviation = deviation.max(d);
        let rank = |x: &nsbvp::linalg::CMat| nsbvp::linalg::orth(x, &split.tols).ncols();
        csv.push_str(&format!("{},{},{},{d:.6e}\n", mode_label(mode), rank(p), rank(m)));
    }
    let (adj, _) = adjoint_split_consistency(&split, f64::INFINITY)?;
    ctx.emit(
        Some(split.r()),
        &[("projector", csv)],
        json!({
            "cut": split.cut,
            "rank_plus": split.rank_plus,
            "rank_minus": split.dim() - split.rank_plus,
            "contour": {
                "quadrature": quad,
                "deviation": deviation,
                "error_estimate": contour.error_estimate,
                "nodes": contour.nodes,
                "height": contour.height,
            },
            "identity_residuals": split.identity_residuals(),
            "adjoint_consistency": adj,
            "adjoint_consistent": adj.max_deviation() <= 1e-8,
        }),
    )
}

fn checkspace(ctx: &Context, samples: usize) -> Result<Value> {
    let op = load_operator(ctx.cli)?;
    let sr = split_for(ctx.cli, &op)?;
    let sq = SpectralSplit::new(&op, SpectralCut::for_operator(&op, second_cut(ctx.cli)?)?, &sr.tols)?;
    let rep = cut_independence_report(&sr, &sq, samples, ctx.cli.seed)?;
    ctx.emit(
        Some(sr.r()),
        &[("checkspace", rep.to_csv())],
        json!({
            "r": rep.r,
            "q": rep.q,
            "samples": rep.samples.len(),
            "inf_ratio": rep.inf_ratio,
            "sup_ratio": rep.sup_ratio,
            "predicted": rep.predicted,
            "within_prediction": rep.within_prediction(1e-10),
            "cross_rank": rep.cross_rank,
            "strip_count": rep.strip_count,
        }),
    )
}

fn bc_check(ctx: &Context, path: &Path) -> Result<Value> {
    let op = load_operator(ctx.cli)?;
    let split = split_for(ctx.cli, &op)?;
    let bc: BcFile = read_json(path)?;
    let cond = bc.to_condition(&op)?;
    let b = cond.realize(&split)?;
    let (_, split_star) = adjoint_split_consistency(&split, 1e-8)?;
    let fp = fp_decomposition_check(&b, &split, &split_star)?;
    let dec = extract_elliptic_decomposition(&b, &split, &split_star)?;
    let adj = adjoint_condition(&b, &eye(op.fiber_dim()), &split_star)?;
    // annihilating the annihilator must give back B
    let back = adj.realized.annihilator(&eye(split.dim()), b.metric.clone(), &split.tols)?;
    ctx.emit(
        Some(split.r()),
        &[],
        json!({
            "condition": cond.name(),
            "dim": b.dim(),
            "fredholm_pairs": fp,
            "decomposition": dec.dims(),
            "residuals": dec.residuals,
            "adjoint": {
                "dim": adj.b_star.dim(),
                "round_trip_distance": b.distance(&back),
            },
        }),
    )
}

fn solve(ctx: &Context, path: &Path) -> Result<Value> {
    let op = load_operator(ctx.cli)?;
    let split = split_for(ctx.cli, &op)?;
    let p: ProblemFile = read_json(path)?;
    let grid = TimeGrid::new(
        ctx.cli.rho.or(p.rho).unwrap_or(1.0),
        ctx.cli.grid.or(p.grid).unwrap_or(256),
    )?;
    let source = if p.source.is_empty() {
        CylinderField::zeros(grid, split.dim())
    } else {
        p.source_field(&op)?.sample(grid).0
    };
    let prob = CylinderProblem {
        split: &split,
        grid,
        sigma0: p.sigma0.as_ref().map(matrix_from_json).transpose()?,
        bc_left: match &p.bc_left {
            Some(c) => c.columns(&op)?,
            None => split.range_basis(false),
        },
        bc_right: match &p.bc_right {
            Some(c) => c.columns(&op)?,
            None => split.range_basis(true),
        },
        source,
    };
    let sol = solve_bvp(&prob)?;
    // discrete norms of u, d_t u and |A_r| u relative to the source
    let u = &sol.field;
    let w = grid.weights();
    let mut norms = [0.0f64; 3];
    for j in 0..=grid.steps {
        norms[0] += w[j] * u.values[j].norm_squared();
        norms[2] += w[j] * split.modulus.apply(&u.values[j])?.norm_squared();
        if j < grid.steps {
            norms[1] += grid.dt() * ((&u.values[j + 1] - &u.values[j]) / nsbvp::linalg::cr(grid.dt())).norm_squared();
        }
    }
    let f = prob.source.norm().max(f64::MIN_POSITIVE);
    ctx.emit(
        Some(split.r()),
        &[("solution", solution_csv(u, &op))],
        json!({
            "grid": grid,
            "summary": sol.summary(),
            "regularity": {
                "source_norm": prob.source.norm(),
                "u_over_f": norms[0].sqrt() / f,
                "dt_u_over_f": norms[1].sqrt() / f,
                "modulus_u_over_f": norms[2].sqrt() / f,
            },
        }),
    )
}

fn index(ctx: &Context) -> Result<Value> {
    let op = load_operator(ctx.cli)?;
    let r = resolve_cut(ctx.cli, &op)?.r;
    let r2 = second_cut(ctx.cli)?;
    SpectralCut::for_operator(&op, r2)?;
    let rep = index_strip(&op, r, r2, ctx.cli.rho, ctx.cli.grid.unwrap_or(32))?;
    ctx.emit(Some(r), &[], json!({ "index": rep.index, "report": rep }))
}

fn example(ctx: &Context, name: &str) -> Result<Value> {
    let alpha = ctx.cli.alpha;
    let n = ctx.cli.modes;
    let op = example_operator(name, alpha, n)?;
    let mut tables = vec![(name, spectrum_csv(&op)?)];
    let mut body = json!({ "example": name, "dim": op.dim() });
    if name == "tilted-dirac" {
        tables.push(("dirac", spectrum_csv(&example_operator("dirac", 0.0, n)?)?));
        let mut computed = nsbvp::speccalc::spectrum(&op)?;
        let mut expected = tilted_dirac_spectrum(alpha, n);
        sort_complex(&mut computed);
        sort_complex(&mut expected);
        let err = computed
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).norm() / b.norm().max(1.0))
            .fold(0.0, f64::max);
        body["alpha"] = json!(alpha);
        // the spectrum lies on Im z = -alpha Re z and Im z = alpha Re z
        body["line_slopes"] = json!([-alpha, alpha]);
        body["closed_form_error"] = json!(err);
    }
    let named: Vec<(String, String)> = tables.into_iter().map(|(s, c)| (format!("{s}_spectrum"), c)).collect();
    let refs: Vec<(&str, String)> = named.iter().map(|(s, c)| (s.as_str(), c.clone())).collect();
    ctx.emit(None, &refs, body)
}
