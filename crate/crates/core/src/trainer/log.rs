use crate::error::{Error, Result};
use crate::metrics::Scores;

pub const CSV_HEADER: &str = "epoch,step,l_inst,l_clus,l_anch,l_total,nmi,acc,ari,icd";

/// Epoch means of the unweighted components and of the weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub instance: f64,
    pub cluster: f64,
    pub anchor: f64,
    pub total: f64,
}

/// One line of the metrics log. Epoch 0 is the post-initialization row and
/// carries no losses; metric cells stay empty without labels or off the eval interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub losses: Option<EpochLosses>,
    pub scores: Option<Scores>,
    pub icd: f64,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let l = self.losses;
        let s = self.scores;
        [
            self.epoch.to_string(),
            self.step.to_string(),
            cell(l.map(|l| l.instance)),
            cell(l.map(|l| l.cluster)),
            cell(l.map(|l| l.anchor)),
            cell(l.map(|l| l.total)),
            cell(s.map(|s| s.nmi)),
            cell(s.map(|s| s.acc)),
            cell(s.map(|s| s.ari)),
            self.icd.to_string(),
        ]
        .join(",")
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = |m: &str| Error::parse("metrics log", format!("{line:?}"), m);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad("expected 10 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let losses = match (opt(f[2])?, opt(f[3])?, opt(f[4])?, opt(f[5])?) {
            (Some(instance), Some(cluster), Some(anchor), Some(total)) => Some(EpochLosses {
                instance,
                cluster,
                anchor,
                total,
            }),
            (None, None, None, None) => None,
            _ => return Err(bad("partial loss cells")),
        };
        let scores = match (opt(f[6])?, opt(f[7])?, opt(f[8])?) {
            (Some(nmi), Some(acc), Some(ari)) => Some(Scores { nmi, acc, ari }),
            (None, None, None) => None,
            _ => return Err(bad("partial metric cells")),
        };
        Ok(Self {
            epoch: f[0].parse().map_err(|_| bad("bad epoch"))?,
            step: f[1].parse().map_err(|_| bad("bad step"))?,
            losses,
            scores,
            icd: num(f[9])?,
        })
    }
}

/// Header plus one line per row, newline terminated.
pub fn render_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::parse("metrics log", "line 1", "unexpected header"));
    }
    lines.filter(|l| !l.is_empty()).map(MetricsRow::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_exactly() {
        let rows = vec![
            MetricsRow {
                epoch: 0,
                step: 130,
                losses: None,
                scores: Some(Scores {
                    nmi: 0.1 + 0.2,
                    acc: 1.0,
                    ari: -0.0625,
                }),
                icd: std::f64::consts::PI,
            },
            MetricsRow {
                epoch: 1,
                step: 143,
                losses: Some(EpochLosses {
                    instance: 1e-17,
                    cluster: 2.5,
                    anchor: 0.0,
                    total: 20.25,
                }),
                scores: None,
                icd: 4.0,
            },
        ];
        let text = render_csv(&rows);
        assert!(text.starts_with("epoch,step,l_inst,l_clus,l_anch,l_total,nmi,acc,ari,icd\n0,130,,,,,"));
        assert_eq!(parse_csv(&text).unwrap(), rows);
        assert!(parse_csv("nope\n").is_err());
        assert!(MetricsRow::parse("1,2,3").is_err());
    }
}
