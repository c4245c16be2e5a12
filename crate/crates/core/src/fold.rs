//! Dense generation of the missing cloud by two-stage folding around
//! the sparse points, and assembly of the completed cloud.

use crate::autodiff::{DiffError, NodeId, Scalar, Tensor};
use crate::config::{ModelConfig, ModelError};
use crate::geom::PointCloud;
use crate::nn::{Ctx, Initializer, Linear, Mlp};

/// `f` evenly spaced samples on `[-0.5, 0.5]`; a single sample sits at 0.
pub fn fold_grid(f: usize) -> Vec<f64> {
    if f == 1 {
        return vec![0.0];
    }
    (0..f).map(|i| -0.5 + i as f64 / (f - 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct Folding {
    pub points_per_center: usize,
    pub mix: Linear,
    pub fold1: Mlp,
    pub fold2: Mlp,
}

impl Folding {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            points_per_center: cfg.fold_points,
            mix: Linear::new("fold.mix", cfg.decoder_width + 3, cfg.mix_width),
            fold1: Mlp::new("fold.f1", &[cfg.mix_width + 1, cfg.fold_hidden, 3]),
            fold2: Mlp::new("fold.f2", &[cfg.mix_width + 3, cfg.fold_hidden, 3]),
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        self.mix.init(init);
        self.fold1.init(init);
        self.fold2.init(init);
    }

    /// Folds `points_per_center` points around every sparse point.
    ///
    /// For center `i` and grid value `g`:
    /// `m = relu(mix([AD_i ; PS_i]))`, `p1 = fold1([m ; g])`,
    /// `point = PS_i + fold2([m ; p1])`. Output is `[X * f, 3]`, grouped by center.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, ad: NodeId, ps: NodeId) -> Result<NodeId, DiffError> {
        let x = ctx.graph.shape(ad)[0];
        if ctx.graph.shape(ps) != [x, 3] {
            return Err(DiffError::ShapeMismatch(format!(
                "fold: AD {:?} vs PS {:?}",
                ctx.graph.shape(ad),
                ctx.graph.shape(ps)
            )));
        }
        let f = self.points_per_center;
        let joined = ctx.graph.concat_cols(ad, ps)?;
        let mixed = self.mix.forward(ctx, joined)?;
        let mixed = ctx.graph.relu(mixed)?;
        let rep: Vec<usize> = (0..x).flat_map(|i| std::iter::repeat(i).take(f)).collect();
        let mixed_rep = ctx.graph.gather_rows(mixed, rep.clone())?;
        let grid = fold_grid(f);
        let grid_col = Tensor::from_fn(&[x * f, 1], |r| T::of(grid[r % f]));
        let grid_col = ctx.graph.constant(grid_col)?;
        let in1 = ctx.graph.concat_cols(mixed_rep, grid_col)?;
        let p1 = self.fold1.forward(ctx, in1)?;
        let in2 = ctx.graph.concat_cols(mixed_rep, p1)?;
        let offset = self.fold2.forward(ctx, in2)?;
        let anchors = ctx.graph.gather_rows(ps, rep)?;
        ctx.graph.add(anchors, offset)
    }
}

/// Graph nodes of the assembled clouds.
#[derive(Debug, Clone, Copy)]
pub struct Assembled {
    /// Folded points followed by the sparse points.
    pub missing: NodeId,
    /// Input points followed by the missing cloud.
    pub completed: NodeId,
}

/// Concatenates `PM = [folded ; PS]` and `PC = [PP ; PM]`. The input
/// points enter as a constant and receive no gradient.
pub fn assemble<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    cfg: &ModelConfig,
    folded: NodeId,
    ps: NodeId,
    pp_n: &PointCloud,
) -> Result<Assembled, ModelError> {
    let nf = ctx.graph.shape(folded)[0];
    let ns = ctx.graph.shape(ps)[0];
    if nf + ns != cfg.missing_count() || pp_n.len() != cfg.n_input {
        return Err(ModelError::CountMismatch(format!(
            "{nf} folded + {ns} sparse + {} input points, expected {} + {}",
            pp_n.len(),
            cfg.missing_count(),
            cfg.n_input
        )));
    }
    let missing = ctx.graph.concat_rows(folded, ps)?;
    let pp = ctx.graph.constant(crate::embed::cloud_tensor(pp_n)?)?;
    let completed = ctx.graph.concat_rows(pp, missing)?;
    Ok(Assembled { missing, completed })
}

/// Plain-cloud version of [`assemble`] for already materialized outputs.
pub fn assemble_clouds(folded: &PointCloud, ps: &PointCloud, pp_n: &PointCloud) -> (PointCloud, PointCloud) {
    let pm = folded.concat(ps);
    let pc = pp_n.concat(&pm);
    (pm, pc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store_for(fold: &Folding, seed: u64) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Initializer::new(&mut rng);
        fold.init(&mut init);
        init.store.cast()
    }

    fn inputs(ctx: &mut Ctx<'_, f64>, cfg: &ModelConfig, seed: u64) -> (NodeId, NodeId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = cfg.n_queries;
        let ad = Tensor::from_fn(&[x, cfg.decoder_width], |_| rng.random_range(-1.0..1.0));
        let ps = Tensor::from_fn(&[x, 3], |_| rng.random_range(-1.0..1.0));
        (ctx.graph.constant(ad).unwrap(), ctx.graph.constant(ps).unwrap())
    }

    #[test]
    fn grid_spans_half_unit() {
        assert_eq!(fold_grid(1), vec![0.0]);
        assert_eq!(fold_grid(3), vec![-0.5, 0.0, 0.5]);
        let g = fold_grid(31);
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], -0.5);
        assert_eq!(g[30], 0.5);
    }

    #[test]
    fn zero_fold_weights_collapse_onto_centers() {
        let cfg = ModelConfig::toy();
        let fold = Folding::new(&cfg);
        let mut store = store_for(&fold, 1);
        let names: Vec<String> = store
            .iter()
            .filter(|(n, _)| n.starts_with("fold.f"))
            .map(|(n, _)| n.to_string())
            .collect();
        for n in names {
            store.get_mut(&n).unwrap().tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut ctx = Ctx::new(&store, false);
        let (ad, ps) = inputs(&mut ctx, &cfg, 2);
        let out = fold.forward(&mut ctx, ad, ps).unwrap();
        let f = cfg.fold_points;
        let (o, p) = (ctx.graph.value(out), ctx.graph.value(ps));
        assert_eq!(o.shape(), &[cfg.n_queries * f, 3]);
        for r in 0..o.rows() {
            assert_eq!(o.row(r), p.row(r / f));
        }
    }

    #[test]
    fn one_point_per_center() {
        let cfg = ModelConfig {
            fold_points: 1,
            ..ModelConfig::toy()
        };
        let fold = Folding::new(&cfg);
        let store = store_for(&fold, 3);
        let mut ctx = Ctx::new(&store, false);
        let (ad, ps) = inputs(&mut ctx, &cfg, 4);
        let out = fold.forward(&mut ctx, ad, ps).unwrap();
        assert_eq!(ctx.graph.shape(out), &[cfg.n_queries, 3]);
    }

    #[test]
    fn mismatched_rows_rejected() {
        let cfg = ModelConfig::toy();
        let fold = Folding::new(&cfg);
        let store = store_for(&fold, 3);
        let mut ctx = Ctx::new(&store, false);
        let (ad, _) = inputs(&mut ctx, &cfg, 4);
        let ps = ctx.graph.constant(Tensor::zeros(&[cfg.n_queries + 1, 3])).unwrap();
        assert!(matches!(fold.forward(&mut ctx, ad, ps), Err(DiffError::ShapeMismatch(_))));
    }

    #[test]
    fn assemble_keeps_input_at_head() {
        let cfg = ModelConfig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pp: PointCloud = (0..cfg.n_input)
            .map(|_| [rng.random_range(-1.0f32..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let store = ParamStore::<f64>::new();
        let mut ctx = Ctx::new(&store, false);
        let folded = ctx.graph.constant(Tensor::zeros(&[cfg.n_queries * cfg.fold_points, 3])).unwrap();
        let ps = ctx.graph.constant(Tensor::full(&[cfg.n_queries, 3], 0.5)).unwrap();
        let a = assemble(&mut ctx, &cfg, folded, ps, &pp).unwrap();
        let pc = ctx.graph.value(a.completed);
        assert_eq!(ctx.graph.shape(a.missing)[0], cfg.missing_count());
        assert_eq!(pc.rows(), cfg.completed_count());
        for (i, p) in pp.points().iter().enumerate() {
            for k in 0..3 {
                assert_eq!(pc.row(i)[k] as f32, p[k]);
            }
        }
        let short = pp.select(&[0, 1]);
        assert!(matches!(assemble(&mut ctx, &cfg, folded, ps, &short), Err(ModelError::CountMismatch(_))));
    }
}
