//! Subcommand implementations. Progress goes to stdout, data to files.

use std::collections::BTreeSet;
use std::path::Path;

use cgm_core::clustering::{
    fit_clusters, preprocess_maps, stability_analysis, Method, PreprocessOptions, StabilityOptions,
};
use cgm_core::influence::{influence_size_regression, EimStack};
use cgm_core::interventions::hybridize;
use cgm_core::io::{self, Provenance};
use cgm_core::models::{make_planted_generator, make_seeded_generator, mix_latents, Arch, PlantedConfig};
use cgm_core::{rng, Graph32, LayerCheck, LayerSel, ModuleSel, Tensor32, VarId};

use crate::args::*;
use crate::CliError;

type Res = Result<(), CliError>;

pub fn dispatch(cli: &Cli, command_line: String) -> Res {
    let ctx = Ctx { seed: cli.seed, prov: Provenance::new(cli.seed, rayon::current_num_threads(), command_line) };
    match &cli.command {
        Command::MakeModel(a) => make_model(&ctx, a),
        Command::Gen(a) => gen(&ctx, a),
        Command::Hybrid(a) => hybrid(&ctx, a),
        Command::Eim(a) => eim(&ctx, a),
        Command::Cluster(a) => cluster(&ctx, a),
        Command::Stability(a) => stability(&ctx, a),
        Command::InfluenceStats(a) => influence_stats(&ctx, a),
        Command::CheckLayer(a) => check_layer(a),
        Command::CheckAncestors(a) => check_ancestors(a),
    }
}

struct Ctx {
    seed: u64,
    prov: Provenance,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load(m: &ModelArgs) -> Result<Graph32, CliError> {
    Ok(match &m.blob {
        Some(b) => io::load_model(&m.model, b)?,
        None => io::load_model_from_manifest(&m.model)?,
    })
}

/// `3`, `0,3,5` or the inclusive range `2..6`.
pub fn parse_list(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || usage(format!("cannot parse `{s}` as a number, list or range"));
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn write_csv(path: &Path, ctx: &Ctx, headers: &[&str], rows: &[Vec<String>]) -> Res {
    io::write_csv(path, &ctx.prov, headers, rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Nmf => Method::Nmf,
        MethodArg::Kmeans => Method::KMeans,
    }
}

fn make_model(ctx: &Ctx, a: &MakeModelArgs) -> Res {
    let g: Graph32 = if a.arch == "planted" {
        let blocks = a
            .blocks
            .split(',')
            .map(|b| {
                let (l, c) = b.trim().split_once('x').ok_or_else(|| usage(format!("block `{b}` is not LATENTSxCHANNELS")))?;
                let parse = |v: &str| v.parse::<usize>().map_err(|_| usage(format!("block `{b}` is not LATENTSxCHANNELS")));
                Ok((parse(l)?, parse(c)?))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let mut cfg = PlantedConfig::striped(&blocks, a.size);
        cfg.depth = a.depth;
        make_planted_generator(&cfg, ctx.seed)?.0
    } else {
        make_seeded_generator(a.arch.parse::<Arch>()?, ctx.seed)?
    };
    let blob = a.out.with_extension("cgmb");
    io::save_model(&g, &a.out, &blob)?;
    let [c, h, w] = g.output_shape();
    println!(
        "{}: {} nodes, {} latents, output {c}x{h}x{w}, layers [{}]",
        a.arch,
        g.node_count(),
        g.latent_dim(),
        g.layers().iter().map(|l| l.name.as_str()).collect::<Vec<_>>().join(", ")
    );
    println!("wrote {} and {}", a.out.display(), blob.display());
    Ok(())
}

fn gen(ctx: &Ctx, a: &GenArgs) -> Res {
    let g = load(&a.model)?;
    if a.count == 0 {
        return Err(usage("--count must be positive"));
    }
    let mut r = rng::stream(ctx.seed, "gen", 0);
    let mut images = Vec::with_capacity(a.count);
    let mut rows = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let z: Vec<f32> = g.latent().sample(&mut r);
        images.push(g.evaluate(&z)?);
        let mut row = vec![i.to_string()];
        row.extend(z.iter().map(|v| v.to_string()));
        rows.push(row);
    }
    io::write_png(&a.png, &io::montage(&images, a.count.min(8), 1)?)?;
    println!("wrote {}", a.png.display());
    if let Some(p) = &a.latents {
        let names: Vec<String> = std::iter::once("sample".to_string()).chain((0..g.latent_dim()).map(|k| format!("z{k}"))).collect();
        let headers: Vec<&str> = names.iter().map(String::as_str).collect();
        write_csv(p, ctx, &headers, &rows)?;
    }
    Ok(())
}

struct Clusters {
    layer: String,
    labels: Vec<usize>,
}

fn read_clusters(path: &Path) -> Result<Clusters, CliError> {
    let t = io::read_csv(path)?;
    let (lc, cc, kc) = (t.column("layer")?, t.column("channel")?, t.column("cluster")?);
    let mut labels = Vec::with_capacity(t.rows.len());
    let mut layer = None;
    for (i, row) in t.rows.iter().enumerate() {
        let parse = |v: &str| v.parse::<usize>().map_err(|_| usage(format!("{}: bad number `{v}`", path.display())));
        if parse(&row[cc])? != i {
            return Err(usage(format!("{}: channels must be listed in order", path.display())));
        }
        labels.push(parse(&row[kc])?);
        match &layer {
            None => layer = Some(row[lc].clone()),
            Some(l) if *l != row[lc] => return Err(usage(format!("{}: mixes layers", path.display()))),
            Some(_) => {}
        }
    }
    let layer = layer.ok_or_else(|| usage(format!("{}: no assignments", path.display())))?;
    Ok(Clusters { layer, labels })
}

fn pick_layer<'g>(g: &'g Graph32, flag: Option<&String>, clusters: Option<&Clusters>) -> Result<&'g LayerSel, CliError> {
    let name = match (flag, clusters) {
        (Some(f), Some(c)) if *f != c.layer => {
            return Err(usage(format!("--layer {f} disagrees with clusters file layer {}", c.layer)))
        }
        (Some(f), _) => f.clone(),
        (None, Some(c)) => c.layer.clone(),
        (None, None) => return Err(usage("--layer is required")),
    };
    Ok(g.layer(&name)?)
}

fn hybrid(ctx: &Ctx, a: &HybridArgs) -> Res {
    let g = load(&a.model)?;
    let clusters = a.clusters.as_deref().map(read_clusters).transpose()?;
    let layer = pick_layer(&g, a.layer.as_ref(), clusters.as_ref())?;
    let channels = match a.module.strip_prefix("cluster:") {
        Some(n) => {
            let n: usize = n.parse().map_err(|_| usage(format!("bad cluster index in `{}`", a.module)))?;
            let c = clusters.as_ref().ok_or_else(|| usage("`cluster:N` needs --clusters"))?;
            let ch: Vec<usize> = (0..c.labels.len()).filter(|&i| c.labels[i] == n).collect();
            if ch.is_empty() {
                return Err(usage(format!("cluster {n} is empty")));
            }
            ch
        }
        None => parse_list(&a.module)?,
    };
    let module = ModuleSel::new(layer.clone(), channels.clone())?;

    // On planted models, a module made of whole blocks has a latent-mixing twin.
    let chosen: BTreeSet<usize> = channels.iter().copied().collect();
    let mut covered = BTreeSet::new();
    let mut blocks = Vec::new();
    for (bi, b) in g.planted_blocks().iter().enumerate() {
        if b.layer == layer.name && b.channels.iter().all(|c| chosen.contains(c)) {
            blocks.push(bi);
            covered.extend(b.channels.iter().copied());
        }
    }
    let planted_check = !blocks.is_empty() && covered == chosen;

    let mut r = rng::stream(ctx.seed, "hybrid", 0);
    let mut rows = Vec::with_capacity(a.pairs);
    let mut tiles = Vec::new();
    let mut exact = 0;
    for i in 0..a.pairs {
        let z1: Vec<f32> = g.latent().sample(&mut r);
        let z2: Vec<f32> = g.latent().sample(&mut r);
        let h = hybridize(&g, &module, &z1, &z2)?;
        let change = h.hybrid.data().iter().zip(h.orig1.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        let check = if planted_check {
            let direct = g.evaluate(&mix_latents(&g, &z1, &z2, &blocks))?;
            let same = direct.data().iter().zip(h.hybrid.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            exact += usize::from(same);
            if same { "exact" } else { "mismatch" }
        } else {
            "n/a"
        };
        rows.push(vec![i.to_string(), change.to_string(), check.to_string()]);
        tiles.extend([h.orig1, h.orig2, h.hybrid]);
    }
    write_csv(&a.out, ctx, &["pair", "max_abs_change", "planted_check"], &rows)?;
    if let Some(p) = &a.png {
        io::write_png(p, &io::montage(&tiles, 3, 1)?)?;
        println!("wrote {}", p.display());
    }
    if planted_check {
        println!("planted check: {exact}/{} hybrids equal latent mixing bit for bit", a.pairs);
        if exact != a.pairs {
            return Err(CliError::Runtime("hybrid differs from latent mixing".into()));
        }
    }
    Ok(())
}

fn maps_montage(stack: &EimStack<f32>) -> Result<Tensor32, CliError> {
    let tiles = stack
        .rows()
        .map(|r| Tensor32::new(vec![1, stack.height, stack.width], r.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    let cols = (stack.channels as f64).sqrt().ceil() as usize;
    Ok(io::montage(&tiles, cols.max(1), 1)?)
}

fn eim(ctx: &Ctx, a: &EimArgs) -> Res {
    let g = load(&a.model)?;
    let layer = g.layer(&a.layer)?;
    println!("{} maps of layer {} from {} pairs", layer.variables.len(), layer.name, a.pairs);
    let stack = cgm_core::elementary_influence_maps(&g, layer, a.pairs, ctx.seed)?;
    io::write_eims(&a.out, &stack)?;
    println!("wrote {}", a.out.display());
    if let Some(p) = &a.png {
        io::write_png(p, &maps_montage(&stack)?)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn preprocessed(path: &Path, p: &PreprocessArgs) -> Result<EimStack<f32>, CliError> {
    let stack = io::read_eims(path)?;
    Ok(preprocess_maps(&stack, &PreprocessOptions { window: p.window, percentile: p.percentile })?)
}

fn cluster(ctx: &Ctx, a: &ClusterArgs) -> Res {
    let s = preprocessed(&a.eims, &a.preprocess)?;
    let features = Tensor32::new(vec![s.channels, s.pixels()], s.data.clone())?;
    let m = fit_clusters(&features, a.k, method(a.method), ctx.seed)?;
    let rows: Vec<Vec<String>> = m
        .assignments
        .iter()
        .enumerate()
        .map(|(c, &k)| vec![s.layer.clone(), c.to_string(), k.to_string()])
        .collect();
    for k in 0..a.k {
        let n = m.assignments.iter().filter(|&&x| x == k).count();
        println!("cluster {k}: {n} channels");
    }
    write_csv(&a.out, ctx, &["layer", "channel", "cluster"], &rows)?;
    if let Some(p) = &a.png {
        let mut t = EimStack::new(&s.layer, a.k, s.height, s.width, m.h.data().to_vec())?;
        t.seed = ctx.seed;
        io::write_png(p, &maps_montage(&t)?)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn stability(ctx: &Ctx, a: &StabilityArgs) -> Res {
    let s = preprocessed(&a.eims, &a.preprocess)?;
    let ks = parse_list(&a.k)?;
    let opts = StabilityOptions { ks, reps: a.reps, method: method(a.method), seed: ctx.seed };
    let report = stability_analysis(&s, &opts)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            println!(
                "K={} consistency {:.3} +- {:.3}, cosine {:.3} +- {:.3}",
                r.k, r.consistency_mean, r.consistency_std, r.cosine_mean, r.cosine_std
            );
            vec![
                r.k.to_string(),
                r.method.to_string(),
                r.reps.to_string(),
                r.consistency_mean.to_string(),
                r.consistency_std.to_string(),
                r.cosine_mean.to_string(),
                r.cosine_std.to_string(),
            ]
        })
        .collect();
    write_csv(
        &a.out,
        ctx,
        &["k", "method", "reps", "consistency_mean", "consistency_std", "cosine_mean", "cosine_std"],
        &rows,
    )
}

fn influence_stats(ctx: &Ctx, a: &InfluenceStatsArgs) -> Res {
    let g = load(&a.model)?;
    let clusters = a.clusters.as_deref().map(read_clusters).transpose()?;
    let layer = pick_layer(&g, a.layer.as_ref(), clusters.as_ref())?;
    let mut modules: Vec<(String, Vec<usize>)> = Vec::new();
    if let Some(c) = &clusters {
        let k = c.labels.iter().max().map_or(0, |m| m + 1);
        for n in 0..k {
            modules.push((format!("cluster:{n}"), (0..c.labels.len()).filter(|&i| c.labels[i] == n).collect()));
        }
    }
    if let Some(list) = &a.modules {
        for (i, part) in list.split(';').enumerate() {
            modules.push((format!("module:{i}"), parse_list(part)?));
        }
    }
    if a.nested {
        let blocks: Vec<_> = g.planted_blocks().iter().filter(|b| b.layer == layer.name).collect();
        if blocks.is_empty() {
            return Err(usage("--nested needs a planted model"));
        }
        for (bi, b) in blocks.iter().enumerate() {
            for n in 1..=b.channels.len() {
                modules.push((format!("block{bi}:{n}"), b.channels[..n].to_vec()));
            }
        }
    }
    modules.retain(|(_, ch)| !ch.is_empty());
    if modules.is_empty() {
        return Err(usage("no modules: pass --clusters, --modules or --nested"));
    }
    let mut rows = Vec::with_capacity(modules.len());
    let mut points = Vec::with_capacity(modules.len());
    for (name, ch) in &modules {
        let m = ModuleSel::new(layer.clone(), ch.clone())?;
        let im = cgm_core::influence_map(&g, &m, a.pairs, ctx.seed)?;
        let inf = cgm_core::individual_influence(&im);
        println!("{name}: {} channels, individual influence {inf:.5}", ch.len());
        points.push((ch.len(), inf));
        let list = ch.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        rows.push(vec![name.clone(), ch.len().to_string(), list, inf.to_string()]);
    }
    write_csv(&a.out, ctx, &["module", "size", "channels", "individual_influence"], &rows)?;
    match influence_size_regression(&points) {
        Ok(r) => {
            println!("regression: slope {:.5}, intercept {:.5}, R^2 {:.3}", r.slope, r.intercept, r.r2);
            if let Some(p) = &a.regression_out {
                let row = vec![points.len().to_string(), r.slope.to_string(), r.intercept.to_string(), r.r2.to_string()];
                write_csv(p, ctx, &["modules", "slope", "intercept", "r2"], &[row])?;
            }
        }
        Err(e) if a.regression_out.is_some() => return Err(e.into()),
        Err(e) => println!("regression skipped: {e}"),
    }
    Ok(())
}

fn parse_vars(g: &Graph32, a: &VarsArgs) -> Result<Vec<VarId>, CliError> {
    if let Some(l) = &a.layer {
        return Ok(g.layer(l)?.variables.clone());
    }
    let list = a.vars.as_deref().ok_or_else(|| usage("pass --vars or --layer"))?;
    let mut out = Vec::new();
    for part in list.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (node, chans) = match part.split_once(':') {
            Some((n, c)) => (n, Some(parse_list(c)?)),
            None => (part, None),
        };
        let idx = g.node_index(node)?;
        let chans = chans.unwrap_or_else(|| (0..g.node_shape(idx)[0]).collect());
        for c in chans {
            out.push(g.var(node, c)?);
        }
    }
    Ok(out)
}

fn check_layer(a: &CheckLayerArgs) -> Res {
    let g = load(&a.vars.model)?;
    let vars = parse_vars(&g, &a.vars)?;
    match g.is_layer(&vars)? {
        LayerCheck::Yes => println!("layer: yes ({} variables)", vars.len()),
        LayerCheck::No { witness } => {
            let path: Vec<String> = witness.iter().map(|v| g.vertex_name(v)).collect();
            println!("layer: no; unblocked path {}", path.join(" -> "));
        }
        LayerCheck::NotMinimal { removable } => println!("layer: not minimal; {} is redundant", g.var_name(removable)),
    }
    Ok(())
}

fn fmt_set(s: &BTreeSet<usize>) -> String {
    format!("{{{}}}", s.iter().map(|k| format!("z{k}")).collect::<Vec<_>>().join(", "))
}

fn check_ancestors(a: &CheckAncestorsArgs) -> Res {
    let g = load(&a.vars.model)?;
    let vars = parse_vars(&g, &a.vars)?;
    println!("latent ancestors of the selection: {}", fmt_set(&g.latent_ancestors(&vars)?));
    println!("latent ancestors of the output avoiding the selection: {}", fmt_set(&g.output_latent_ancestors(&vars)?));
    for v in &vars {
        println!("  {}: {}", g.var_name(*v), fmt_set(&g.latent_ancestors(&[*v])?));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list("3").unwrap(), vec![3]);
        assert_eq!(parse_list("2..6").unwrap(), vec![2, 3, 4, 5, 6]);
        assert_eq!(parse_list("0, 4,2").unwrap(), vec![0, 4, 2]);
        assert!(parse_list("6..2").is_err());
        assert!(parse_list("a").is_err());
    }
}
