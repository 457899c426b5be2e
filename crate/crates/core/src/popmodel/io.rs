//! CSV forms of microcensus datasets and sampler chains.
//!
//! Dataset: `loc_id,t,r,s,l,A,N,x1..xK`, `N` empty for prediction targets.
//! Chain: `draw,log_joint` followed by one column per scalar parameter, named
//! `alpha0`, `alpha_t.<i>`, ..., `beta.<k>`, `sigma.<j>`.

use std::io::{Read, Write};

use super::{Chain, Dataset, GroupKey, Levels, LocationRecord, ModelError, ModelParams};

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn write_dataset_csv<W: Write>(data: &Dataset, destination: W) -> Result<(), ModelError> {
    let mut w = writer(destination);
    let mut header: Vec<String> = ["loc_id", "t", "r", "s", "l", "A", "N"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=data.n_covariates()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for rec in data.records() {
        let mut row = vec![
            rec.id.clone(),
            rec.key.t.to_string(),
            rec.key.r.to_string(),
            rec.key.s.to_string(),
            rec.key.l.to_string(),
            rec.area.to_string(),
            rec.count.map(|n| n.to_string()).unwrap_or_default(),
        ];
        row.extend(rec.x.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset. Level counts default to the smallest that cover the
/// records; pass `levels` to pin them (e.g. to a fitted chain's levels).
pub fn read_dataset_csv<R: Read>(source: R, levels: Option<Levels>) -> Result<Dataset, ModelError> {
    let mut r = csv::ReaderBuilder::new().from_reader(source);
    let header = r.headers()?.clone();
    let fixed = ["loc_id", "t", "r", "s", "l", "A", "N"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(ModelError::Schema(format!("header must start with {}", fixed.join(","))));
    }
    let k = header.len() - fixed.len();
    for (j, h) in header.iter().skip(fixed.len()).enumerate() {
        if h != format!("x{}", j + 1) {
            return Err(ModelError::Schema(format!("expected column x{}, found {h}", j + 1)));
        }
    }

    let mut records = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |col: &str, v: &str| ModelError::Parse {
            row,
            reason: format!("bad {col}: {v:?}"),
        };
        let id = |j: usize| rec[j].parse::<usize>().map_err(|_| bad(fixed[j], &rec[j]));
        let count = if rec[6].is_empty() {
            None
        } else {
            Some(rec[6].parse::<u64>().map_err(|_| bad("N", &rec[6]))?)
        };
        let x = (0..k)
            .map(|j| rec[7 + j].parse::<f64>().map_err(|_| bad(&header[7 + j], &rec[7 + j])))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(LocationRecord {
            id: rec[0].to_string(),
            key: GroupKey::new(id(1)?, id(2)?, id(3)?, id(4)?),
            x,
            area: rec[5].parse::<f64>().map_err(|_| bad("A", &rec[5]))?,
            count,
        });
    }
    let levels = levels.unwrap_or_else(|| Levels::covering(&records));
    Dataset::new(levels, k, records)
}

pub fn write_chain_csv<W: Write>(chain: &Chain, destination: W) -> Result<(), ModelError> {
    let first = chain.draws.first().ok_or(ModelError::EmptyChain)?;
    let mut w = writer(destination);
    let mut header = vec!["draw".to_string(), "log_joint".to_string()];
    header.extend(first.column_names());
    w.write_record(&header)?;
    for (i, (p, lj)) in chain.draws.iter().zip(&chain.log_joint).enumerate() {
        let mut row = vec![i.to_string(), lj.to_string()];
        row.extend(p.to_columns().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn group_len(header: &csv::StringRecord, prefix: &str) -> Result<usize, ModelError> {
    let n = header.iter().filter(|h| h.split_once('.').is_some_and(|(p, _)| p == prefix)).count();
    for i in 0..n {
        let name = format!("{prefix}.{i}");
        if !header.iter().any(|h| h == name) {
            return Err(ModelError::Schema(format!("missing column {name}")));
        }
    }
    Ok(n)
}

/// Reads a chain written by [`write_chain_csv`]. Run metadata (seed,
/// burn-in, acceptance) lives in the run manifest, not the CSV, and is zeroed.
pub fn read_chain_csv<R: Read>(source: R) -> Result<Chain, ModelError> {
    let mut r = csv::ReaderBuilder::new().from_reader(source);
    let header = r.headers()?.clone();
    let mut lens = [0usize; 6];
    for (slot, prefix) in ["alpha_t", "alpha_r", "alpha_s", "alpha_l", "beta", "sigma"].iter().enumerate() {
        lens[slot] = group_len(&header, prefix)?;
    }
    let template = ModelParams {
        alpha0: 0.0,
        alpha_t: vec![0.0; lens[0]],
        alpha_r: vec![0.0; lens[1]],
        alpha_s: vec![0.0; lens[2]],
        alpha_l: vec![0.0; lens[3]],
        beta: vec![0.0; lens[4]],
        sigma: vec![0.0; lens[5]],
        hyper_sds: Default::default(),
    };
    if lens[..4].contains(&0) || lens[5] == 0 {
        return Err(ModelError::Schema("chain needs at least one level per factor and one sigma".into()));
    }
    let mut expected = vec!["draw".to_string(), "log_joint".to_string()];
    expected.extend(template.column_names());
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(ModelError::Schema(format!("expected header {}", expected.join(","))));
    }

    let mut chain = Chain {
        draws: Vec::new(),
        log_joint: Vec::new(),
        seed: 0,
        burn_in: 0,
        acceptance_rate: 0.0,
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>().map_err(|_| ModelError::Parse {
                    row: i + 2,
                    reason: format!("not a number: {v:?}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut p = template.clone();
        let mut it = values[1..].iter().copied();
        p.alpha0 = it.next().unwrap_or_default();
        for v in [&mut p.alpha_t, &mut p.alpha_r, &mut p.alpha_s, &mut p.alpha_l, &mut p.beta, &mut p.sigma] {
            for slot in v.iter_mut() {
                *slot = it.next().unwrap_or_default();
            }
        }
        chain.log_joint.push(values[0]);
        chain.draws.push(p);
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::popmodel::{simulate_dataset, SigmaMode, SimulationConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Dataset {
        let mut truth = ModelParams::zeros(Levels::new(2, 2, 1, 1), 2, SigmaMode::Pooled);
        truth.alpha0 = 4.0;
        truth.sigma = vec![0.3];
        let cfg = SimulationConfig {
            n_locations: 25,
            truth,
            area_range: (0.5, 3.0),
            unobserved: 3,
        };
        simulate_dataset(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().0
    }

    #[test]
    fn dataset_round_trip() {
        let data = sample();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("loc_id,t,r,s,l,A,N,x1,x2\n"));
        let back = read_dataset_csv(text.as_bytes(), Some(data.levels())).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn dataset_schema() {
        assert!(matches!(
            read_dataset_csv("id,t,r\n".as_bytes(), None),
            Err(ModelError::Schema(_))
        ));
        assert!(matches!(
            read_dataset_csv("loc_id,t,r,s,l,A,N,x2\n".as_bytes(), None),
            Err(ModelError::Schema(_))
        ));
        assert!(matches!(
            read_dataset_csv("loc_id,t,r,s,l,A,N\na,0,0,0,0,-1,\n".as_bytes(), None),
            Err(ModelError::InvalidRecord { .. })
        ));
    }

    #[test]
    fn chain_round_trip() {
        let mut p = ModelParams::zeros(Levels::new(2, 1, 1, 3), 2, SigmaMode::PerType);
        p.alpha0 = 4.25;
        p.alpha_l[2] = -0.125;
        p.beta = vec![0.1, 0.2];
        p.sigma = vec![0.3, 0.35];
        let mut q = p.clone();
        q.alpha0 = 4.5;
        let chain = Chain {
            draws: vec![p, q],
            log_joint: vec![-10.5, -11.0],
            seed: 0,
            burn_in: 0,
            acceptance_rate: 0.0,
        };
        let mut buf = Vec::new();
        write_chain_csv(&chain, &mut buf).unwrap();
        let back = read_chain_csv(buf.as_slice()).unwrap();
        assert_eq!(back, chain);
    }
}
