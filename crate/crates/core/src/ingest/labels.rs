//! Interval label files: `start_sample,end_sample_exclusive,class` per line.

use super::{Label, LabelTrack};
use crate::error::{Error, Result};

/// Expands an interval file into a per-sample track. Uncovered samples are `W`.
pub fn parse_labels(text: &str, duration_samples: usize) -> Result<LabelTrack> {
    let mut intervals: Vec<(usize, usize, Label)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::LabelFormat {
                line: line_no,
                msg: format!("expected 3 comma-separated fields, got {}", parts.len()),
            });
        }
        let bound = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::LabelFormat {
                line: line_no,
                msg: format!("bad sample index {s:?}"),
            })
        };
        let (start, end) = (bound(parts[0])?, bound(parts[1])?);
        let class: Label = parts[2].parse()?;
        if start >= end || end > duration_samples {
            return Err(Error::IntervalOutOfRange { start, end, len: duration_samples });
        }
        intervals.push((start, end, class));
    }

    intervals.sort_by_key(|iv| iv.0);
    for pair in intervals.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b.0 < a.1 {
            return Err(Error::OverlappingIntervals(a.0, a.1, b.0, b.1));
        }
    }

    let mut labels = vec![Label::W; duration_samples];
    for (start, end, class) in intervals {
        labels[start..end].fill(class);
    }
    Ok(LabelTrack::new(labels))
}

/// Writes the non-`W` runs of a track as interval lines.
pub fn format_labels(track: &LabelTrack) -> String {
    let mut out = String::from("# start_sample,end_sample_exclusive,class\n");
    let labels = &track.labels;
    let mut i = 0;
    while i < labels.len() {
        let mut j = i + 1;
        while j < labels.len() && labels[j] == labels[i] {
            j += 1;
        }
        if labels[i] != Label::W {
            out.push_str(&format!("{i},{j},{}\n", labels[i]));
        }
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_interval_fills_and_defaults_to_wake() {
        let t = parse_labels("1000,2000,MSE\n", 4000).unwrap();
        assert_eq!(t.len(), 4000);
        for (i, l) in t.labels.iter().enumerate() {
            let want = if (1000..2000).contains(&i) { Label::Mse } else { Label::W };
            assert_eq!(*l, want, "sample {i}");
        }
    }

    #[test]
    fn empty_file_is_all_wake() {
        let t = parse_labels("", 50).unwrap();
        assert!(t.labels.iter().all(|&l| l == Label::W));
        let t = parse_labels("# only a comment\n\n", 5).unwrap();
        assert_eq!(t.labels, vec![Label::W; 5]);
    }

    #[test]
    fn overlap_is_rejected() {
        let err = parse_labels("0,100,MSE\n50,150,ED\n", 200).unwrap_err();
        assert!(matches!(err, Error::OverlappingIntervals(0, 100, 50, 150)));
    }

    #[test]
    fn adjacent_intervals_are_fine() {
        let t = parse_labels("0,2,MSE\n2,4,ED\n", 5).unwrap();
        assert_eq!(t.labels[1], Label::Mse);
        assert_eq!(t.labels[2], Label::Drowsy);
    }

    #[test]
    fn bad_rows() {
        assert!(matches!(parse_labels("0,10,XX", 20), Err(Error::UnknownClass(_))));
        assert!(matches!(parse_labels("0,30,MSE", 20), Err(Error::IntervalOutOfRange { .. })));
        assert!(matches!(parse_labels("5,5,MSE", 20), Err(Error::IntervalOutOfRange { .. })));
        assert!(matches!(parse_labels("5;6;MSE", 20), Err(Error::LabelFormat { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn format_then_parse_is_identity(codes in proptest::collection::vec(0usize..4, 0..300)) {
            let track = LabelTrack::new(codes.iter().map(|&c| Label::from_code(c).unwrap()).collect());
            let back = parse_labels(&format_labels(&track), track.len()).unwrap();
            prop_assert_eq!(back, track);
        }
    }
}
