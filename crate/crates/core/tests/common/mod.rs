#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graphedit::embed::EmbeddingMatrix;
use graphedit::gcn::{self, GcnParams};
use graphedit::graph::{build_graph, normalize_adjacency, NodeRecord, TextGraph};
use graphedit::predictor::{self, EdgePredictorModel, PairSample};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Graph on `n` nodes with each pair present with probability `p`.
pub fn random_graph(n: usize, p: f64, classes: usize, seed: u64) -> TextGraph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let nodes = (0..n).map(|i| NodeRecord::new(i, format!("node {i}"), "", i % classes)).collect();
    let cats = (0..classes).map(|c| format!("C{c}")).collect();
    build_graph(nodes, &edges, cats).unwrap()
}

/// Dense `D^-1/2 (A + I) D^-1/2` computed from scratch.
pub fn dense_normalized(n: usize, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut a = Array2::<f64>::eye(n);
    for &(i, j) in edges {
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = a[[i, j]] / (deg[i].sqrt() * deg[j].sqrt());
        }
    }
    out
}

pub fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
}

/// Largest relative error between analytic and central-difference
/// derivatives over every entry of `params`.
pub fn max_fd_error<F>(params: &mut [f64], analytic: &[f64], step: f64, mut loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let orig = params[k];
        params[k] = orig + step;
        let up = loss(params);
        params[k] = orig - step;
        let down = loss(params);
        params[k] = orig;
        let numeric = (up - down) / (2.0 * step);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}

/// Minimal HTTP/1.1 server. `handler(request_index, body)` returns the status
/// code and response body. Serves until the process exits.
pub struct MiniServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

pub fn serve<F>(handler: F) -> MiniServer
where
    F: Fn(usize, &str) -> (u16, String) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let handler = Arc::new(handler);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let handler = handler.clone();
            let counter = counter.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream);
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0; len];
                if reader.read_exact(&mut body).is_err() {
                    return;
                }
                let idx = counter.fetch_add(1, Ordering::SeqCst);
                let (status, resp) = handler(idx, &String::from_utf8_lossy(&body));
                let mut stream = reader.into_inner();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{resp}",
                    resp.len()
                );
            });
        }
    });
    MiniServer { url, hits }
}

/// A URL nothing listens on.
pub fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1")
}

pub fn flatten_predictor(m: &EdgePredictorModel) -> Vec<f64> {
    let mut v: Vec<f64> = m.w_hidden.iter().chain(&m.b_hidden).chain(&m.w_out).copied().collect();
    v.push(m.b_out);
    v
}

pub fn unflatten_predictor(v: &[f64], dim: usize, hidden: usize) -> EdgePredictorModel {
    let mut m = EdgePredictorModel::zeros(dim, hidden);
    let mut it = v.iter().copied();
    for x in m.w_hidden.iter_mut().chain(m.b_hidden.iter_mut()).chain(m.w_out.iter_mut()) {
        *x = it.next().unwrap();
    }
    m.b_out = it.next().unwrap();
    m
}

pub fn random_emb(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut r = rng(seed);
    let rows = (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    EmbeddingMatrix::from_rows(rows, d, "random").unwrap()
}

/// Each class writes only into its own block of coordinates.
pub fn separable_emb(labels: &[usize], classes: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut r = rng(seed);
    let block = d / classes;
    let rows = labels
        .iter()
        .map(|&c| {
            let mut row = vec![0.0; d];
            for x in &mut row[c * block..(c + 1) * block] {
                *x = r.gen::<f64>();
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter().map(|x| x / norm).collect()
        })
        .collect();
    EmbeddingMatrix::from_rows(rows, d, "separable").unwrap()
}

/// Largest relative finite-difference error of the edge predictor on 6 samples, d=8, h=4.
pub fn predictor_gradient_error(seed: u64) -> f64 {
    let (n, d, h) = (10, 8, 4);
    let emb = random_emb(n, d, seed);
    let mut r = rng(seed + 100);
    let samples: Vec<PairSample> = (0..6)
        .map(|_| {
            let i = r.gen_range(0..n);
            let j = (i + 1 + r.gen_range(0..n - 1)) % n;
            PairSample::labeled(i, j, r.gen_range(0..2), r.gen_range(0..2))
        })
        .collect();
    let mut model = EdgePredictorModel::glorot(d, h, seed);
    model.b_hidden = Array1::from_shape_fn(h, |_| r.gen_range(-0.5..0.5));
    model.b_out = 0.3;
    let (_, grads) = predictor::loss_and_grads(&model, &emb, &samples, None).unwrap();
    let analytic = flatten_predictor(&grads);
    let mut params = flatten_predictor(&model);
    max_fd_error(&mut params, &analytic, 1e-5, |p| predictor::loss_and_grads(&unflatten_predictor(p, d, h), &emb, &samples, None).unwrap().0)
}

fn flatten_gcn(p: &GcnParams) -> Vec<f64> {
    p.w0.iter().chain(&p.b0).chain(&p.w1).chain(&p.b1).copied().collect()
}

fn unflatten_gcn(v: &[f64], shape: &GcnParams) -> GcnParams {
    let mut p = shape.clone();
    let mut it = v.iter().copied();
    for x in p.w0.iter_mut().chain(p.b0.iter_mut()).chain(p.w1.iter_mut()).chain(p.b1.iter_mut()) {
        *x = it.next().unwrap();
    }
    p
}

pub fn randomized_gcn_params(d: usize, h: usize, c: usize, seed: u64) -> GcnParams {
    let mut r = rng(seed);
    let mut p = GcnParams::glorot(d, h, c, seed);
    p.b0 = Array1::from_shape_fn(h, |_| r.gen_range(-0.3..0.3));
    p.b1 = Array1::from_shape_fn(c, |_| r.gen_range(-0.3..0.3));
    p
}

/// Largest relative finite-difference error for the GCN (`with_graph`) or the MLP.
pub fn gcn_gradient_error(seed: u64, with_graph: bool) -> f64 {
    let (n, d, h, c) = (12, 8, 4, 3);
    let g = random_graph(n, 0.3, c, seed);
    let adj = normalize_adjacency(&g);
    let adj = with_graph.then_some(&adj);
    let mut r = rng(seed + 1);
    let x = random_matrix(n, d, &mut r);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
    let mask: Vec<usize> = (0..n).filter(|i| i % 4 != 3).collect();
    let p = randomized_gcn_params(d, h, c, seed);
    let (_, grads) = gcn::loss_and_grads(adj, &x, &p, &labels, &mask).unwrap();
    let mut params = flatten_gcn(&p);
    max_fd_error(&mut params, &flatten_gcn(&grads), 1e-5, |v| {
        gcn::loss_and_grads(adj, &x, &unflatten_gcn(v, &p), &labels, &mask).unwrap().0
    })
}
