//! Plain-text file formats.
//!
//! Every writer emits floats with Rust's shortest round-trip formatting, so
//! `parse_*(write_*(x)) == x` holds exactly.
//!
//! MDP files are whitespace separated, `#` starts a comment:
//!
//! ```text
//! MDP <n_states> <n_actions> <gamma> <initial_state>
//! <s> <a> <s'> <p>
//! LABEL <name> <s1> <s2> ...
//! FEAT <s> <f1> ... <fk>
//! ```

use std::io::{self, Write};

use thiserror::Error;

use crate::learn::IterationRecord;
use crate::mdp::{FeatureMap, Labels, Mdp, ModelError, Policy, RewardWeights, Trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

/// Non-empty lines with comments stripped, numbered from 1.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn field<T: std::str::FromStr>(line: usize, token: Option<&str>, what: &str) -> Result<T, IoError> {
    let token = token.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    token
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what} `{token}`")))
}

pub fn write_mdp<W: Write>(mut w: W, mdp: &Mdp, features: Option<&FeatureMap>) -> io::Result<()> {
    writeln!(
        w,
        "MDP {} {} {} {}",
        mdp.n_states(),
        mdp.n_actions(),
        mdp.gamma(),
        mdp.initial_state()
    )?;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for &(t, p) in mdp.row(s, a) {
                writeln!(w, "{s} {a} {t} {p}")?;
            }
        }
    }
    for (name, states) in mdp.labels() {
        if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == '#') {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("label `{name}` cannot be written"),
            ));
        }
        write!(w, "LABEL {name}")?;
        for s in states {
            write!(w, " {s}")?;
        }
        writeln!(w)?;
    }
    if let Some(features) = features {
        for s in 0..features.n_states() {
            write!(w, "FEAT {s}")?;
            for v in features.get(s) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Parses an MDP file; the feature map is present iff the file has `FEAT` lines.
pub fn parse_mdp(text: &str) -> Result<(Mdp, Option<FeatureMap>), IoError> {
    let mut lines = content_lines(text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "missing MDP header"))?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("MDP") {
        return Err(parse_err(hl, "expected `MDP` header"));
    }
    let n: usize = field(hl, tok.next(), "state count")?;
    let m: usize = field(hl, tok.next(), "action count")?;
    let gamma: f64 = field(hl, tok.next(), "discount")?;
    let init: usize = field(hl, tok.next(), "initial state")?;
    if tok.next().is_some() {
        return Err(parse_err(hl, "trailing tokens after header"));
    }
    if n == 0 || m == 0 {
        return Err(ModelError::Empty.into());
    }
    let mut rows = vec![Vec::new(); n * m];
    let mut labels = Labels::new();
    let mut feats: Vec<Option<Vec<f64>>> = Vec::new();
    for (ln, line) in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("LABEL") => {
                let name: String = field(ln, tok.next(), "label name")?;
                let set = labels.entry(name).or_default();
                for t in tok {
                    set.insert(field(ln, Some(t), "state")?);
                }
            }
            Some("FEAT") => {
                let s: usize = field(ln, tok.next(), "state")?;
                if s >= n {
                    return Err(parse_err(ln, format!("state {s} out of range")));
                }
                let values = tok.map(|t| field(ln, Some(t), "feature")).collect::<Result<_, _>>()?;
                feats.resize(n, None);
                if feats[s].replace(values).is_some() {
                    return Err(parse_err(ln, format!("duplicate features for state {s}")));
                }
            }
            first => {
                let s: usize = field(ln, first, "state")?;
                let a: usize = field(ln, tok.next(), "action")?;
                let t: usize = field(ln, tok.next(), "successor")?;
                let p: f64 = field(ln, tok.next(), "probability")?;
                if tok.next().is_some() {
                    return Err(parse_err(ln, "trailing tokens after transition"));
                }
                if s >= n || a >= m {
                    return Err(parse_err(ln, format!("pair ({s}, {a}) out of range")));
                }
                rows[s * m + a].push((t, p));
            }
        }
    }
    let mdp = Mdp::new(n, m, gamma, init, rows, labels)?;
    let features = if feats.is_empty() {
        None
    } else {
        let rows = feats
            .into_iter()
            .enumerate()
            .map(|(s, f)| f.ok_or_else(|| parse_err(0, format!("no FEAT line for state {s}"))))
            .collect::<Result<_, _>>()?;
        Some(FeatureMap::new(rows)?)
    };
    Ok((mdp, features))
}

pub fn write_policy<W: Write>(mut w: W, policy: &Policy) -> io::Result<()> {
    for (s, a) in policy.actions().iter().enumerate() {
        writeln!(w, "{s} {a}")?;
    }
    Ok(())
}

/// Every state from 0 to the largest listed must appear exactly once.
pub fn parse_policy(text: &str) -> Result<Policy, IoError> {
    let mut actions: Vec<Option<usize>> = Vec::new();
    for (ln, line) in content_lines(text) {
        let mut tok = line.split_whitespace();
        let s: usize = field(ln, tok.next(), "state")?;
        let a: usize = field(ln, tok.next(), "action")?;
        if tok.next().is_some() {
            return Err(parse_err(ln, "trailing tokens"));
        }
        if s >= actions.len() {
            actions.resize(s + 1, None);
        }
        if actions[s].replace(a).is_some() {
            return Err(parse_err(ln, format!("state {s} listed twice")));
        }
    }
    let actions = actions
        .into_iter()
        .enumerate()
        .map(|(s, a)| a.ok_or_else(|| parse_err(0, format!("no action for state {s}"))))
        .collect::<Result<_, _>>()?;
    Ok(Policy::new(actions))
}

pub fn write_trajectories<W: Write>(mut w: W, demos: &[Trajectory]) -> io::Result<()> {
    for tau in demos {
        let line: Vec<String> = tau.states.iter().map(ToString::to_string).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>, IoError> {
    content_lines(text)
        .map(|(ln, line)| {
            let states = line
                .split_whitespace()
                .map(|t| field(ln, Some(t), "state"))
                .collect::<Result<_, _>>()?;
            Ok(Trajectory::new(states))
        })
        .collect()
}

pub fn write_weights<W: Write>(mut w: W, weights: &RewardWeights) -> io::Result<()> {
    let line: Vec<String> = weights.as_slice().iter().map(ToString::to_string).collect();
    writeln!(w, "{}", line.join(" "))
}

pub fn parse_weights(text: &str) -> Result<RewardWeights, IoError> {
    let mut lines = content_lines(text);
    let (ln, line) = lines.next().ok_or_else(|| parse_err(1, "empty weight file"))?;
    if let Some((extra, _)) = lines.next() {
        return Err(parse_err(extra, "weights must be on a single line"));
    }
    let omega = line
        .split_whitespace()
        .map(|t| field(ln, Some(t), "weight"))
        .collect::<Result<_, _>>()?;
    Ok(RewardWeights::new(omega)?)
}

/// `height` lines of `width` comma-separated values, row `y` holding
/// `values[y * width ..][..width]`.
pub fn write_reward_map_csv<W: Write>(mut w: W, values: &[f64], width: usize) -> io::Result<()> {
    for row in values.chunks(width.max(1)) {
        let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Returns `(width, values)`; all rows must have the same length.
pub fn parse_reward_map_csv(text: &str) -> Result<(usize, Vec<f64>), IoError> {
    let mut width = None;
    let mut values = Vec::new();
    for (ln, line) in content_lines(text) {
        let before = values.len();
        for t in line.split(',') {
            values.push(field(ln, Some(t.trim()), "value")?);
        }
        let w = values.len() - before;
        if *width.get_or_insert(w) != w {
            return Err(parse_err(ln, format!("row has {w} values, expected {}", width.unwrap())));
        }
    }
    Ok((width.unwrap_or(0), values))
}

/// Binary 8-bit graymap (`P5`), linearly scaled so the minimum maps to 0
/// and the maximum to 255. A constant map is all black.
pub fn write_pgm<W: Write>(mut w: W, values: &[f64], width: usize, height: usize) -> io::Result<()> {
    if values.len() != width * height {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} values for a {width}×{height} image", values.len()),
        ));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(&pixels)
}

/// Reads a `P5` graymap with maxval 255, returning `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), IoError> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String, IoError> {
        while *pos < bytes.len() {
            match bytes[*pos] {
                b'#' => {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => *pos += 1,
                _ => break,
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(parse_err(0, "truncated graymap header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err(parse_err(0, "not a binary graymap"));
    }
    let width: usize = field(0, Some(&token(&mut pos)?), "width")?;
    let height: usize = field(0, Some(&token(&mut pos)?), "height")?;
    let maxval: usize = field(0, Some(&token(&mut pos)?), "maxval")?;
    if maxval != 255 {
        return Err(parse_err(0, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[(pos + 1).min(bytes.len())..];
    if raster.len() != width * height {
        return Err(parse_err(0, format!("{} pixels for a {width}×{height} image", raster.len())));
    }
    Ok((width, height, raster.to_vec()))
}

pub const TRANSCRIPT_COLUMNS: &str = "iter,k,inf,delta,probability,verdict,mu_dist";

/// One parsed transcript row.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptRow {
    pub iter: usize,
    pub k: f64,
    pub inf: f64,
    pub delta: f64,
    pub probability: f64,
    pub verdict: String,
    pub mu_dist: f64,
}

impl From<&IterationRecord> for TranscriptRow {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iter: r.iter,
            k: r.k,
            inf: r.inf,
            delta: r.delta,
            probability: r.probability,
            verdict: r.verdict.to_string(),
            mu_dist: r.mu_dist,
        }
    }
}

/// CSV transcript preceded by `# key=value` lines.
pub fn write_transcript<W: Write>(
    mut w: W,
    header: &[(String, String)],
    records: &[IterationRecord],
) -> io::Result<()> {
    for (key, value) in header {
        writeln!(w, "# {key}={value}")?;
    }
    writeln!(w, "{TRANSCRIPT_COLUMNS}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.iter, r.k, r.inf, r.delta, r.probability, r.verdict, r.mu_dist
        )?;
    }
    Ok(())
}

/// Returns the `# key=value` header pairs and the rows.
#[allow(clippy::type_complexity)]
pub fn parse_transcript(text: &str) -> Result<(Vec<(String, String)>, Vec<TranscriptRow>), IoError> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    let mut seen_columns = false;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if let Some(pair) = line.strip_prefix('#') {
            if let Some((k, v)) = pair.trim().split_once('=') {
                header.push((k.to_string(), v.to_string()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if !seen_columns {
            if line != TRANSCRIPT_COLUMNS {
                return Err(parse_err(ln, "expected transcript column header"));
            }
            seen_columns = true;
            continue;
        }
        let mut tok = line.split(',');
        let row = TranscriptRow {
            iter: field(ln, tok.next(), "iter")?,
            k: field(ln, tok.next(), "k")?,
            inf: field(ln, tok.next(), "inf")?,
            delta: field(ln, tok.next(), "delta")?,
            probability: field(ln, tok.next(), "probability")?,
            verdict: field(ln, tok.next(), "verdict")?,
            mu_dist: field(ln, tok.next(), "mu_dist")?,
        };
        if tok.next().is_some() {
            return Err(parse_err(ln, "too many columns"));
        }
        rows.push(row);
    }
    if !seen_columns {
        return Err(parse_err(0, "missing transcript column header"));
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GridWorldSpec;
    use crate::testutil::random_mdp;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn to_string(f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn gridworld_round_trips_with_features() {
        let (mdp, features) = GridWorldSpec::preset(8).build().unwrap();
        let text = to_string(|w| write_mdp(w, &mdp, Some(&features)));
        let (back, feats) = parse_mdp(&text).unwrap();
        assert_eq!(back, mdp);
        assert_eq!(feats.unwrap(), features);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# two states\nMDP 2 1 0.9 0\n\n0 0 1 1 # always move\n1 0 1 1\nLABEL unsafe 1\n";
        let (mdp, features) = parse_mdp(text).unwrap();
        assert!(features.is_none());
        assert_eq!(mdp.probability(0, 0, 1), 1.0);
        assert!(mdp.labels()["unsafe"].contains(&1));
    }

    #[test]
    fn bad_mdp_files_report_lines() {
        let err = parse_mdp("MDP 2 1 0.9 0\n0 0 1 x\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 2, .. }), "{err}");
        let err = parse_mdp("MDP 2 1 0.9 0\n0 0 1 0.5\n1 0 1 1\n").unwrap_err();
        assert!(matches!(err, IoError::Model(ModelError::RowSum { .. })));
        let err = parse_mdp("MDP 1 1 0.9 0\n0 0 0 1\nFEAT 0 0.5\nFEAT 0 0.5\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 4, .. }));
        assert!(parse_mdp("").is_err());
    }

    #[test]
    fn policy_rejects_gaps_and_repeats() {
        assert_eq!(parse_policy("0 1\n1 0\n").unwrap(), Policy::new(vec![1, 0]));
        assert!(parse_policy("0 1\n2 0\n").is_err());
        assert!(parse_policy("0 1\n0 0\n").is_err());
    }

    #[test]
    fn pgm_scales_to_full_range() {
        let mut buf = Vec::new();
        write_pgm(&mut buf, &[-1.0, 0.0, 1.0, 0.5], 2, 2).unwrap();
        let (w, h, px) = parse_pgm(&buf).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(px, vec![0, 128, 255, 191]);
        let mut flat = Vec::new();
        write_pgm(&mut flat, &[3.0; 3], 3, 1).unwrap();
        assert_eq!(parse_pgm(&flat).unwrap().2, vec![0, 0, 0]);
    }

    #[test]
    fn transcript_round_trips() {
        use crate::learn::RecordVerdict;
        let records = vec![IterationRecord {
            iter: 1,
            k: 0.75,
            inf: 0.5,
            delta: 1e-20,
            probability: 0.1 + 0.2,
            verdict: RecordVerdict::SatDuplicate,
            mu_dist: 3.25,
            weights: RewardWeights::zeros(2),
            counterexample: None,
        }];
        let header = vec![("pstar".to_string(), "0.2".to_string())];
        let text = to_string(|w| write_transcript(w, &header, &records));
        let (h, rows) = parse_transcript(&text).unwrap();
        assert_eq!(h, header);
        assert_eq!(rows, vec![TranscriptRow::from(&records[0])]);
        assert_eq!(rows[0].verdict, "SAT_DUP");
    }

    proptest! {
        #[test]
        fn random_mdps_round_trip(seed in any::<u64>(), n in 1usize..6, m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mdp = random_mdp(&mut rng, n, m, 0.95);
            let text = to_string(|w| write_mdp(w, &mdp, None));
            prop_assert_eq!(parse_mdp(&text).unwrap().0, mdp);
        }

        #[test]
        fn policies_round_trip(actions in prop::collection::vec(0usize..7, 1..40)) {
            let policy = Policy::new(actions);
            let text = to_string(|w| write_policy(w, &policy));
            prop_assert_eq!(parse_policy(&text).unwrap(), policy);
        }

        #[test]
        fn trajectories_round_trip(demos in prop::collection::vec(prop::collection::vec(0usize..100, 1..20), 0..10)) {
            let demos: Vec<Trajectory> = demos.into_iter().map(Trajectory::new).collect();
            let text = to_string(|w| write_trajectories(w, &demos));
            prop_assert_eq!(parse_trajectories(&text).unwrap(), demos);
        }

        #[test]
        fn weights_round_trip(raw in prop::collection::vec(-1.0f64..1.0, 1..8)) {
            let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            let weights = RewardWeights::new(raw.iter().map(|x| x / n).collect()).unwrap();
            let text = to_string(|w| write_weights(w, &weights));
            prop_assert_eq!(parse_weights(&text).unwrap(), weights);
        }

        #[test]
        fn reward_maps_round_trip(width in 1usize..6, values in prop::collection::vec(-1e3f64..1e3, 1..30)) {
            let values = values[..values.len() / width * width].to_vec();
            prop_assume!(!values.is_empty());
            let text = to_string(|w| write_reward_map_csv(w, &values, width));
            prop_assert_eq!(parse_reward_map_csv(&text).unwrap(), (width, values));
        }
    }
}
