use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{Edge, GraphError, TextGraph};
use crate::refine::{Provenance, RefinedGraph};

const PALETTE: [&str; 10] = [
    "#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462", "#b3de69", "#fccde5", "#d9d9d9", "#bc80bd",
];

/// Render the subgraph induced by `subset` as an undirected DOT document.
///
/// Nodes are colored by label. Without `refined` every induced original edge is
/// drawn plainly; with it, edges are styled by provenance: kept originals solid,
/// added candidates green, deleted originals red and dashed, and originals that
/// the refinement never screened grey and dotted.
pub fn to_dot(g: &TextGraph, subset: &BTreeSet<usize>, refined: Option<&RefinedGraph>) -> Result<String, GraphError> {
    if let Some(&bad) = subset.iter().find(|&&i| i >= g.num_nodes()) {
        return Err(GraphError::UnknownNode(bad));
    }
    let mut out = String::from("graph refined {\n  node [shape=circle, style=filled];\n");
    for &i in subset {
        let label = g.label(i);
        let _ = writeln!(
            out,
            "  n{i} [label=\"{i}\", tooltip=\"{}\", fillcolor=\"{}\"];",
            escape(&g.category_names()[label]),
            PALETTE[label % PALETTE.len()]
        );
    }

    let induced = |e: &Edge| subset.contains(&e.lo()) && subset.contains(&e.hi());
    match refined {
        None => {
            for e in g.edges().iter().filter(|e| induced(e)) {
                let _ = writeln!(out, "  n{} -- n{};", e.lo(), e.hi());
            }
        }
        Some(r) => {
            let mut all: BTreeSet<Edge> = g.edges().iter().copied().filter(induced).collect();
            all.extend(r.edges.keys().copied().filter(induced));
            all.extend(r.deleted_originals.iter().copied().filter(induced));
            for e in all {
                let style = match (r.edges.get(&e), r.deleted_originals.contains(&e)) {
                    (Some(Provenance::KeptOriginal), _) => "color=black",
                    (Some(Provenance::AddedCandidate), _) => "color=forestgreen, penwidth=2",
                    (None, true) => "color=red, style=dashed",
                    (None, false) => "color=grey, style=dotted",
                };
                let _ = writeln!(out, "  n{} -- n{} [{style}];", e.lo(), e.hi());
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
