use crate::data::EpisodeFrame;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::sim::{Backbone, SceneTokens, N_TARGET};
use crate::vehicle::{PhysicsVector, D_PHYS};

use super::ops::{
    affine, affine_back_input, affine_back_params, dot, gelu, gelu_grad, layer_norm,
    layer_norm_back, sigmoid, softmax,
};
use super::params::{Affine, FusionLayer, PhysicsPath, PolicyParams};

pub type WaypointPlan = [Vec2; N_TARGET];

/// Network input: frozen scene tokens, masked physics vector and target point.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    /// `N_TARGET x d`, row-major.
    pub tokens: Vec<f64>,
    /// Masked physics vector; padded slots are exactly zero.
    pub physics: Vec<f64>,
    pub target: Vec2,
}

impl PolicyInput {
    pub fn new(tokens: &SceneTokens, physics: &PhysicsVector, target: Vec2) -> Self {
        Self {
            tokens: tokens.values.clone(),
            physics: physics.masked().collect(),
            target,
        }
    }

    pub fn from_frame(frame: &EpisodeFrame, backbone: &Backbone) -> Self {
        Self::new(&backbone.project(&frame.features), &frame.physics, frame.target_point)
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.tokens.len() != N_TARGET * d {
            return Err(Error::Shape(format!(
                "{} token values, expected {N_TARGET} x {d}",
                self.tokens.len()
            )));
        }
        if self.physics.len() != D_PHYS {
            return Err(Error::Shape(format!(
                "physics vector has {} entries, expected {D_PHYS}",
                self.physics.len()
            )));
        }
        Ok(())
    }
}

/// Mean absolute error over all 16 coordinates.
pub fn l1_loss(pred: &WaypointPlan, expert: &WaypointPlan) -> f64 {
    let mut s = 0.0;
    for (p, e) in pred.iter().zip(expert) {
        s += (p.x - e.x).abs() + (p.y - e.y).abs();
    }
    s / (2 * N_TARGET) as f64
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default)]
struct PhysCache {
    hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    o: Vec<f64>,
    ln1_hat: Vec<f64>,
    ln1_inv: Vec<f64>,
    x1: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    ln2_hat: Vec<f64>,
    ln2_inv: Vec<f64>,
}

#[derive(Debug, Clone)]
struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    gh_n: Vec<f64>,
    h: Vec<f64>,
}

/// Everything the backward pass needs, plus the attention maps.
#[derive(Debug, Clone)]
pub struct Trace {
    pub plan: WaypointPlan,
    /// Physics embedding; empty for variants without a physics query.
    pub embedding: Vec<f64>,
    /// Decoder input tokens, `N_TARGET x d`.
    pub fused: Vec<f64>,
    /// Per layer, `heads x N_TARGET` attention weights.
    pub attention: Vec<Vec<f64>>,
    phys: PhysCache,
    concat_in: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
    gru: Vec<GruStep>,
}

fn w<'a>(p: &'a PolicyParams, a: &Affine) -> (&'a [f64], &'a [f64]) {
    (p.get(a.w), p.get(a.b))
}

fn encode(p: &PolicyParams, physics: &[f64], cache: &mut PhysCache) -> Result<Vec<f64>> {
    if physics.len() != D_PHYS {
        return Err(Error::Shape(format!(
            "physics vector has {} entries, expected {D_PHYS}",
            physics.len()
        )));
    }
    let d = p.arch.d;
    let mut z = vec![0.0; d];
    match &p.layout.physics {
        PhysicsPath::Encoder { l1, l2 } => {
            let (w1, b1) = w(p, l1);
            let mut h = vec![0.0; l1.b.rows];
            affine(w1, b1, physics, &mut h);
            h.iter_mut().for_each(|v| *v = v.tanh());
            let (w2, b2) = w(p, l2);
            affine(w2, b2, &h, &mut z);
            cache.hidden = h;
        }
        PhysicsPath::Linear(a) => {
            let (wl, bl) = w(p, a);
            affine(wl, bl, physics, &mut z);
        }
        PhysicsPath::Concat(_) | PhysicsPath::None => {
            return Err(Error::Shape(format!(
                "variant `{}` has no physics embedding",
                p.variant
            )))
        }
    }
    Ok(z)
}

/// Physics embedding for variants with a physics query.
pub fn encode_physics(p: &PolicyParams, physics: &PhysicsVector) -> Result<Vec<f64>> {
    let v: Vec<f64> = physics.masked().collect();
    encode(p, &v, &mut PhysCache::default())
}

fn fuse_layer(p: &PolicyParams, fl: &FusionLayer, z: &[f64], x: &[f64]) -> Result<(Vec<f64>, LayerCache)> {
    let d = p.arch.d;
    let heads = p.arch.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let t = N_TARGET;

    let mut q = vec![0.0; d];
    let (wq, bq) = w(p, &fl.q);
    affine(wq, bq, z, &mut q);
    let mut k = vec![0.0; t * d];
    let mut v = vec![0.0; t * d];
    let (wk, bk) = w(p, &fl.k);
    let (wv, bv) = w(p, &fl.v);
    for i in 0..t {
        let xi = &x[i * d..(i + 1) * d];
        affine(wk, bk, xi, &mut k[i * d..(i + 1) * d]);
        affine(wv, bv, xi, &mut v[i * d..(i + 1) * d]);
    }

    let mut attn = vec![0.0; heads * t];
    let mut o = vec![0.0; d];
    for h in 0..heads {
        let hs = h * dh..(h + 1) * dh;
        let row = &mut attn[h * t..(h + 1) * t];
        for i in 0..t {
            row[i] = dot(&q[hs.clone()], &k[i * d + hs.start..i * d + hs.end]) * scale;
        }
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite attention logits".into()));
        }
        softmax(row);
        for i in 0..t {
            let a = row[i];
            for j in hs.clone() {
                o[j] += a * v[i * d + j];
            }
        }
    }
    // The query stream keeps its residual, so the broadcast update carries
    // the physics embedding itself and not only what it selects.
    let mut u = vec![0.0; d];
    let (wo, bo) = w(p, &fl.o);
    affine(wo, bo, &o, &mut u);
    for (u, z) in u.iter_mut().zip(z) {
        *u += z;
    }

    let (g1, be1) = w(p, &fl.ln1);
    let (g2, be2) = w(p, &fl.ln2);
    let (wf1, bf1) = w(p, &fl.ff1);
    let (wf2, bf2) = w(p, &fl.ff2);
    let d_ff = p.arch.d_ff;
    let mut x1 = vec![0.0; t * d];
    let mut ln1_hat = vec![0.0; t * d];
    let mut ln1_inv = vec![0.0; t];
    let mut pre = vec![0.0; t * d_ff];
    let mut act = vec![0.0; t * d_ff];
    let mut out = vec![0.0; t * d];
    let mut ln2_hat = vec![0.0; t * d];
    let mut ln2_inv = vec![0.0; t];
    let mut y = vec![0.0; d];
    let mut f = vec![0.0; d];
    for i in 0..t {
        let r = i * d..(i + 1) * d;
        for j in 0..d {
            y[j] = x[i * d + j] + u[j];
        }
        ln1_inv[i] = layer_norm(&y, g1, be1, &mut x1[r.clone()], &mut ln1_hat[r.clone()]);
        let fr = i * d_ff..(i + 1) * d_ff;
        affine(wf1, bf1, &x1[r.clone()], &mut pre[fr.clone()]);
        for j in fr.clone() {
            act[j] = gelu(pre[j]);
        }
        affine(wf2, bf2, &act[fr], &mut f);
        for j in 0..d {
            y[j] = x1[i * d + j] + f[j];
        }
        ln2_inv[i] = layer_norm(&y, g2, be2, &mut out[r.clone()], &mut ln2_hat[r]);
    }
    let cache = LayerCache {
        input: x.to_vec(),
        q,
        k,
        v,
        attn,
        o,
        ln1_hat,
        ln1_inv,
        x1,
        pre,
        act,
        ln2_hat,
        ln2_inv,
    };
    Ok((out, cache))
}

/// Runs the fusion stack. Returns fused tokens and per-layer attention maps.
pub fn fuse(p: &PolicyParams, z: &[f64], tokens: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = p.arch.d;
    if z.len() != d || tokens.len() != N_TARGET * d {
        return Err(Error::Shape(format!(
            "fusion expects a {d}-vector query and {N_TARGET} x {d} tokens"
        )));
    }
    let mut x = tokens.to_vec();
    let mut maps = Vec::new();
    for fl in &p.layout.fusion {
        let (nx, c) = fuse_layer(p, fl, z, &x)?;
        x = nx;
        maps.push(c.attn);
    }
    Ok((x, maps))
}

fn decode(p: &PolicyParams, fused: &[f64], tp: Vec2, steps: &mut Vec<GruStep>) -> Result<WaypointPlan> {
    let d = p.arch.d;
    if fused.len() != N_TARGET * d {
        return Err(Error::Shape(format!(
            "decoder expects {N_TARGET} tokens of width {d}, got {} values",
            fused.len()
        )));
    }
    let (wih, bih) = w(p, &p.layout.gru_ih);
    let (whh, bhh) = w(p, &p.layout.gru_hh);
    let (wh, bh) = w(p, &p.layout.head);
    let s = p.arch.target_scale;
    let mut h = vec![0.0; d];
    let mut plan = [Vec2::ZERO; N_TARGET];
    let mut acc = Vec2::ZERO;
    let mut gi = vec![0.0; 3 * d];
    let mut gh = vec![0.0; 3 * d];
    for t in 0..N_TARGET {
        let mut x = fused[t * d..(t + 1) * d].to_vec();
        x.push(tp.x * s);
        x.push(tp.y * s);
        affine(wih, bih, &x, &mut gi);
        affine(whh, bhh, &h, &mut gh);
        let mut st = GruStep {
            x,
            h_prev: h.clone(),
            r: vec![0.0; d],
            z: vec![0.0; d],
            n: vec![0.0; d],
            gh_n: gh[2 * d..].to_vec(),
            h: vec![0.0; d],
        };
        for j in 0..d {
            st.r[j] = sigmoid(gi[j] + gh[j]);
            st.z[j] = sigmoid(gi[d + j] + gh[d + j]);
            st.n[j] = (gi[2 * d + j] + st.r[j] * gh[2 * d + j]).tanh();
            st.h[j] = (1.0 - st.z[j]) * st.n[j] + st.z[j] * h[j];
        }
        h.copy_from_slice(&st.h);
        let mut off = [0.0; 2];
        affine(wh, bh, &h, &mut off);
        acc += Vec2::new(off[0], off[1]);
        plan[t] = acc;
        steps.push(st);
    }
    Ok(plan)
}

/// GRU decoder over fused tokens with the target point appended at every step.
pub fn decode_waypoints(p: &PolicyParams, fused: &[f64], tp: Vec2) -> Result<WaypointPlan> {
    decode(p, fused, tp, &mut Vec::new())
}

/// Forward pass keeping every intermediate needed by [`backward`].
pub fn forward_trace(p: &PolicyParams, input: &PolicyInput) -> Result<Trace> {
    let d = p.arch.d;
    input.check(d)?;
    let mut phys = PhysCache::default();
    let mut concat_in = Vec::new();
    let mut layers = Vec::new();
    let mut embedding = Vec::new();
    let fused = match &p.layout.physics {
        PhysicsPath::None => input.tokens.clone(),
        PhysicsPath::Concat(a) => {
            let (wc, bc) = w(p, a);
            let mut out = vec![0.0; N_TARGET * d];
            for i in 0..N_TARGET {
                let mut xin = input.tokens[i * d..(i + 1) * d].to_vec();
                xin.extend_from_slice(&input.physics);
                affine(wc, bc, &xin, &mut out[i * d..(i + 1) * d]);
                concat_in.push(xin);
            }
            out
        }
        PhysicsPath::Encoder { .. } | PhysicsPath::Linear(_) => {
            embedding = encode(p, &input.physics, &mut phys)?;
            let mut x = input.tokens.clone();
            for fl in &p.layout.fusion {
                let (nx, c) = fuse_layer(p, fl, &embedding, &x)?;
                x = nx;
                layers.push(c);
            }
            x
        }
    };
    let mut gru = Vec::with_capacity(N_TARGET);
    let plan = decode(p, &fused, input.target, &mut gru)?;
    if !plan.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite waypoint".into()));
    }
    Ok(Trace {
        plan,
        embedding,
        fused,
        attention: layers.iter().map(|c| c.attn.clone()).collect(),
        phys,
        concat_in,
        layers,
        gru,
    })
}

pub fn forward(p: &PolicyParams, input: &PolicyInput) -> Result<WaypointPlan> {
    Ok(forward_trace(p, input)?.plan)
}

/// Adds `dL/dθ` of the L1 loss for one sample into `grad`; returns the loss.
pub fn backward_into(
    p: &PolicyParams,
    input: &PolicyInput,
    expert: &WaypointPlan,
    grad: &mut [f64],
) -> Result<f64> {
    if grad.len() != p.len() {
        return Err(Error::Shape(format!(
            "gradient buffer has {} entries, parameters {}",
            grad.len(),
            p.len()
        )));
    }
    let tr = forward_trace(p, input)?;
    let loss = l1_loss(&tr.plan, expert);
    let d = p.arch.d;
    let k = 1.0 / (2 * N_TARGET) as f64;

    // Reverse cumulative sum: offset t feeds every waypoint from t on.
    let mut d_off = [[0.0; 2]; N_TARGET];
    let mut run = [0.0; 2];
    for t in (0..N_TARGET).rev() {
        run[0] += k * sign(tr.plan[t].x - expert[t].x);
        run[1] += k * sign(tr.plan[t].y - expert[t].y);
        d_off[t] = run;
    }

    let lay = &p.layout;
    let mut d_fused = vec![0.0; N_TARGET * d];
    {
        let whh = p.get(lay.gru_hh.w);
        let wih = p.get(lay.gru_ih.w);
        let wh = p.get(lay.head.w);
        let mut dh = vec![0.0; d];
        let mut dgi = vec![0.0; 3 * d];
        let mut dgh = vec![0.0; 3 * d];
        let mut dx = vec![0.0; d + 2];
        for t in (0..N_TARGET).rev() {
            let st = &tr.gru[t];
            {
                let (dw, db) = split2(grad, lay.head);
                affine_back_params(dw, db, &d_off[t], &st.h);
            }
            affine_back_input(wh, &d_off[t], &mut dh);
            let mut dh_prev = vec![0.0; d];
            for j in 0..d {
                let dn = dh[j] * (1.0 - st.z[j]);
                let dz = dh[j] * (st.h_prev[j] - st.n[j]);
                dh_prev[j] = dh[j] * st.z[j];
                let dn_pre = dn * (1.0 - st.n[j] * st.n[j]);
                let dz_pre = dz * st.z[j] * (1.0 - st.z[j]);
                let dr = dn_pre * st.gh_n[j];
                let dr_pre = dr * st.r[j] * (1.0 - st.r[j]);
                dgi[j] = dr_pre;
                dgi[d + j] = dz_pre;
                dgi[2 * d + j] = dn_pre;
                dgh[j] = dr_pre;
                dgh[d + j] = dz_pre;
                dgh[2 * d + j] = dn_pre * st.r[j];
            }
            {
                let (dw, db) = split2(grad, lay.gru_ih);
                affine_back_params(dw, db, &dgi, &st.x);
            }
            {
                let (dw, db) = split2(grad, lay.gru_hh);
                affine_back_params(dw, db, &dgh, &st.h_prev);
            }
            dx.fill(0.0);
            affine_back_input(wih, &dgi, &mut dx);
            d_fused[t * d..(t + 1) * d].copy_from_slice(&dx[..d]);
            affine_back_input(whh, &dgh, &mut dh_prev);
            dh = dh_prev;
        }
    }

    match &lay.physics {
        PhysicsPath::None => {}
        PhysicsPath::Concat(a) => {
            let (dw, db) = split2(grad, *a);
            for (i, xin) in tr.concat_in.iter().enumerate() {
                affine_back_params(dw, db, &d_fused[i * d..(i + 1) * d], xin);
            }
        }
        PhysicsPath::Encoder { .. } | PhysicsPath::Linear(_) => {
            let mut dz = vec![0.0; d];
            let mut dx = d_fused;
            for (fl, c) in lay.fusion.iter().zip(&tr.layers).rev() {
                dx = fuse_layer_back(p, fl, c, &tr.embedding, &dx, &mut dz, grad);
            }
            match &lay.physics {
                PhysicsPath::Encoder { l1, l2 } => {
                    {
                        let (dw, db) = split2(grad, *l2);
                        affine_back_params(dw, db, &dz, &tr.phys.hidden);
                    }
                    let mut dhid = vec![0.0; l1.b.rows];
                    affine_back_input(p.get(l2.w), &dz, &mut dhid);
                    for (g, h) in dhid.iter_mut().zip(&tr.phys.hidden) {
                        *g *= 1.0 - h * h;
                    }
                    let (dw, db) = split2(grad, *l1);
                    affine_back_params(dw, db, &dhid, &input.physics);
                }
                PhysicsPath::Linear(a) => {
                    let (dw, db) = split2(grad, *a);
                    affine_back_params(dw, db, &dz, &input.physics);
                }
                _ => unreachable!(),
            }
        }
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(loss)
}

/// Loss and full gradient for one sample.
pub fn backward(p: &PolicyParams, input: &PolicyInput, expert: &WaypointPlan) -> Result<(f64, Vec<f64>)> {
    let mut g = vec![0.0; p.len()];
    let loss = backward_into(p, input, expert, &mut g)?;
    Ok((loss, g))
}

/// Disjoint mutable views of an affine block's weight and bias gradients.
fn split2(grad: &mut [f64], a: Affine) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(a.w.offset + a.w.len(), a.b.offset);
    let (w, rest) = grad[a.w.offset..a.b.offset + a.b.len()].split_at_mut(a.w.len());
    (w, rest)
}

fn fuse_layer_back(
    p: &PolicyParams,
    fl: &FusionLayer,
    c: &LayerCache,
    z: &[f64],
    d_out: &[f64],
    dz: &mut [f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let d = p.arch.d;
    let d_ff = p.arch.d_ff;
    let heads = p.arch.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let t = N_TARGET;
    let g1 = p.get(fl.ln1.w);
    let g2 = p.get(fl.ln2.w);

    let mut dx = vec![0.0; t * d];
    let mut du = vec![0.0; d];
    let mut dy2 = vec![0.0; d];
    let mut dy1 = vec![0.0; d];
    let mut df = vec![0.0; d_ff];
    for i in 0..t {
        let r = i * d..(i + 1) * d;
        let fr = i * d_ff..(i + 1) * d_ff;
        {
            let (dg, db) = split2(grad, fl.ln2);
            layer_norm_back(&d_out[r.clone()], &c.ln2_hat[r.clone()], c.ln2_inv[i], g2, dg, db, &mut dy2);
        }
        {
            let (dw, db) = split2(grad, fl.ff2);
            affine_back_params(dw, db, &dy2, &c.act[fr.clone()]);
        }
        df.fill(0.0);
        affine_back_input(p.get(fl.ff2.w), &dy2, &mut df);
        for (j, g) in df.iter_mut().enumerate() {
            *g *= gelu_grad(c.pre[i * d_ff + j]);
        }
        {
            let (dw, db) = split2(grad, fl.ff1);
            affine_back_params(dw, db, &df, &c.x1[r.clone()]);
        }
        let mut dx1 = dy2.clone();
        affine_back_input(p.get(fl.ff1.w), &df, &mut dx1);
        {
            let (dg, db) = split2(grad, fl.ln1);
            layer_norm_back(&dx1, &c.ln1_hat[r.clone()], c.ln1_inv[i], g1, dg, db, &mut dy1);
        }
        dx[r].copy_from_slice(&dy1);
        for j in 0..d {
            du[j] += dy1[j];
        }
    }

    {
        let (dw, db) = split2(grad, fl.o);
        affine_back_params(dw, db, &du, &c.o);
    }
    let mut d_o = vec![0.0; d];
    affine_back_input(p.get(fl.o.w), &du, &mut d_o);
    for (g, u) in dz.iter_mut().zip(&du) {
        *g += u;
    }

    let mut dq = vec![0.0; d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut da = vec![0.0; t];
    for h in 0..heads {
        let hs = h * dh..(h + 1) * dh;
        let a = &c.attn[h * t..(h + 1) * t];
        for i in 0..t {
            let vi = &c.v[i * d + hs.start..i * d + hs.end];
            da[i] = dot(&d_o[hs.clone()], vi);
            for j in hs.clone() {
                dv[i * d + j] += a[i] * d_o[j];
            }
        }
        let s: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
        for i in 0..t {
            let ds = a[i] * (da[i] - s) * scale;
            for j in hs.clone() {
                dq[j] += ds * c.k[i * d + j];
                dk[i * d + j] += ds * c.q[j];
            }
        }
    }
    for i in 0..t {
        let r = i * d..(i + 1) * d;
        let xi = &c.input[r.clone()];
        {
            let (dw, db) = split2(grad, fl.k);
            affine_back_params(dw, db, &dk[r.clone()], xi);
        }
        {
            let (dw, db) = split2(grad, fl.v);
            affine_back_params(dw, db, &dv[r.clone()], xi);
        }
        affine_back_input(p.get(fl.k.w), &dk[r.clone()], &mut dx[r.clone()]);
        affine_back_input(p.get(fl.v.w), &dv[r.clone()], &mut dx[r]);
    }
    {
        let (dw, db) = split2(grad, fl.q);
        affine_back_params(dw, db, &dq, z);
    }
    affine_back_input(p.get(fl.q.w), &dq, dz);
    dx
}
