//! Text dumps of generated datasets.
//!
//! A dump is a [`Record`] with a header in the unnamed section
//!
//! ```text
//! kind = moons | icl | induction
//! version = 1
//! count = <items>
//! ```
//!
//! followed by one `[item.<i>]` section per item:
//!
//! * moons: `periods = p1 p2 p3`, `phases = f1 f2 f3`; the header also
//!   carries `len`, and observations are regenerated from the system.
//! * icl: `pfa = <index>`, `tokens = ...`, `strings = s:e ...`; each
//!   automaton referenced is stored as `[pfa.<j>]` with `start`,
//!   `alphabet`, `states` and one `edges.<state> = next:token:prob ...`
//!   line per state. The header carries `pfas = <count>`.
//! * induction: `tokens`, `queries`, `labels`; the header carries `vocab`.
//!
//! Floats are written in shortest round-trip form, so decoding restores
//! every value bit for bit.

use crate::error::{ensure, Error, Result};
use crate::record::{fmt_f64, fmt_list, parse_list, Record};

use super::induction::InductionSample;
use super::moons::MoonSystem;
use super::pfa::{Edge, IclSequence, PfaSpec};

pub const DUMP_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetDump {
    Moons {
        len: usize,
        systems: Vec<MoonSystem>,
    },
    Icl {
        pfas: Vec<PfaSpec>,
        items: Vec<(usize, IclSequence)>,
    },
    Induction {
        vocab: usize,
        samples: Vec<InductionSample>,
    },
}

fn item(i: usize) -> String {
    format!("item.{i}")
}

pub fn encode_dump(dump: &DatasetDump) -> String {
    let mut r = Record::new();
    let (kind, count) = match dump {
        DatasetDump::Moons { systems, .. } => ("moons", systems.len()),
        DatasetDump::Icl { items, .. } => ("icl", items.len()),
        DatasetDump::Induction { samples, .. } => ("induction", samples.len()),
    };
    r.set("", "kind", kind);
    r.set("", "version", DUMP_VERSION);
    r.set("", "count", count);
    match dump {
        DatasetDump::Moons { len, systems } => {
            r.set("", "len", len);
            for (i, s) in systems.iter().enumerate() {
                r.set(&item(i), "periods", fmt_list(&s.periods));
                let phases: Vec<String> = s.phases.iter().map(|&p| fmt_f64(p)).collect();
                r.set(&item(i), "phases", phases.join(" "));
            }
        }
        DatasetDump::Icl { pfas, items } => {
            r.set("", "pfas", pfas.len());
            for (j, p) in pfas.iter().enumerate() {
                let sec = format!("pfa.{j}");
                r.set(&sec, "start", p.start);
                r.set(&sec, "alphabet", p.alphabet);
                r.set(&sec, "states", p.n_states());
                for (s, out) in p.edges.iter().enumerate() {
                    let e: Vec<String> = out
                        .iter()
                        .map(|e| format!("{}:{}:{}", e.next, e.token, fmt_f64(e.prob)))
                        .collect();
                    r.set(&sec, &format!("edges.{s}"), e.join(" "));
                }
            }
            for (i, (p, seq)) in items.iter().enumerate() {
                r.set(&item(i), "pfa", p);
                r.set(&item(i), "tokens", fmt_list(&seq.tokens));
                let s: Vec<String> = seq.strings.iter().map(|(a, b)| format!("{a}:{b}")).collect();
                r.set(&item(i), "strings", s.join(" "));
            }
        }
        DatasetDump::Induction { vocab, samples } => {
            r.set("", "vocab", vocab);
            for (i, s) in samples.iter().enumerate() {
                r.set(&item(i), "tokens", fmt_list(&s.tokens));
                r.set(&item(i), "queries", fmt_list(&s.queries));
                r.set(&item(i), "labels", fmt_list(&s.labels));
            }
        }
    }
    r.to_string()
}

fn get<'a>(r: &'a Record, section: &str, key: &str) -> Result<&'a str> {
    r.get(section, key)
        .ok_or_else(|| Error::parse(format!("missing {key} in [{section}]")))
}

fn bounded(count: usize, r: &Record) -> Result<()> {
    // Every item needs its own section, so larger counts are malformed.
    ensure!(
        count <= r.sections().len(),
        "count {count} exceeds the sections present"
    );
    Ok(())
}

fn parse_triple<T: std::str::FromStr + Copy>(raw: &str) -> Result<[T; 3]> {
    let v: Vec<T> = parse_list(raw)?;
    v.try_into()
        .map_err(|_| Error::parse(format!("expected three values in {raw:?}")))
}

fn parse_pfa(r: &Record, j: usize) -> Result<PfaSpec> {
    let sec = format!("pfa.{j}");
    let start: usize = r.parse_value(&sec, "start")?;
    let alphabet: usize = r.parse_value(&sec, "alphabet")?;
    let states: usize = r.parse_value(&sec, "states")?;
    ensure!(states >= 1 && states <= r.keys().count(), "bad state count {states}");
    let mut edges = Vec::with_capacity(states);
    for s in 0..states {
        let raw = get(r, &sec, &format!("edges.{s}"))?;
        let mut out = Vec::new();
        for tok in raw.split_whitespace() {
            let parts: Vec<&str> = tok.split(':').collect();
            ensure!(parts.len() == 3, "bad edge {tok:?}");
            let bad = || Error::parse(format!("bad edge {tok:?}"));
            out.push(Edge {
                next: parts[0].parse().map_err(|_| bad())?,
                token: parts[1].parse().map_err(|_| bad())?,
                prob: parts[2].parse().map_err(|_| bad())?,
            });
        }
        edges.push(out);
    }
    let pfa = PfaSpec { start, alphabet, edges };
    pfa.validate().map_err(|e| Error::parse(format!("[{sec}]: {e}")))?;
    Ok(pfa)
}

pub fn decode_dump(text: &str) -> Result<DatasetDump> {
    let r = Record::parse(text)?;
    let version: u32 = r.parse_value("", "version")?;
    ensure!(version == DUMP_VERSION, "unsupported dump version {version}");
    let count: usize = r.parse_value("", "count")?;
    bounded(count, &r)?;
    match get(&r, "", "kind")? {
        "moons" => {
            let len: usize = r.parse_value("", "len")?;
            let mut systems = Vec::with_capacity(count);
            for i in 0..count {
                let periods = parse_triple::<u64>(get(&r, &item(i), "periods")?)?;
                let phases = parse_triple::<f64>(get(&r, &item(i), "phases")?)?;
                systems.push(MoonSystem::new(periods, phases)?);
            }
            Ok(DatasetDump::Moons { len, systems })
        }
        "icl" => {
            let n_pfas: usize = r.parse_value("", "pfas")?;
            bounded(n_pfas, &r)?;
            let pfas = (0..n_pfas).map(|j| parse_pfa(&r, j)).collect::<Result<Vec<_>>>()?;
            let mut items = Vec::with_capacity(count);
            for i in 0..count {
                let p: usize = r.parse_value(&item(i), "pfa")?;
                ensure!(p < pfas.len(), "item {i} refers to missing automaton {p}");
                let tokens: Vec<usize> = parse_list(get(&r, &item(i), "tokens")?)?;
                ensure!(
                    tokens.iter().all(|&t| t < pfas[p].vocab()),
                    "item {i} has a token outside the vocab"
                );
                let mut strings = Vec::new();
                for s in get(&r, &item(i), "strings")?.split_whitespace() {
                    let (a, b) = s
                        .split_once(':')
                        .ok_or_else(|| Error::parse(format!("bad string range {s:?}")))?;
                    let a: usize = a.parse().map_err(|_| Error::parse(format!("bad string range {s:?}")))?;
                    let b: usize = b.parse().map_err(|_| Error::parse(format!("bad string range {s:?}")))?;
                    ensure!(a < b && b <= tokens.len(), "string range {s:?} out of bounds");
                    strings.push((a, b));
                }
                ensure!(!strings.is_empty(), "item {i} has no strings");
                items.push((p, IclSequence { tokens, strings }));
            }
            Ok(DatasetDump::Icl { pfas, items })
        }
        "induction" => {
            let vocab: usize = r.parse_value("", "vocab")?;
            let mut samples = Vec::with_capacity(count);
            for i in 0..count {
                let tokens: Vec<usize> = parse_list(get(&r, &item(i), "tokens")?)?;
                let queries: Vec<usize> = parse_list(get(&r, &item(i), "queries")?)?;
                let labels: Vec<usize> = parse_list(get(&r, &item(i), "labels")?)?;
                ensure!(
                    tokens.iter().all(|&t| t < vocab),
                    "item {i} has a token outside the vocab"
                );
                ensure!(
                    queries.len() == labels.len(),
                    "item {i}: queries and labels differ in length"
                );
                for (&q, &l) in queries.iter().zip(&labels) {
                    ensure!(
                        q + 1 < tokens.len() && tokens[q + 1] == l,
                        "item {i}: label mismatch at {q}"
                    );
                }
                samples.push(InductionSample {
                    tokens,
                    queries,
                    labels,
                });
            }
            Ok(DatasetDump::Induction { vocab, samples })
        }
        other => Err(Error::parse(format!("unknown dump kind {other:?}"))),
    }
}
