//! Preprocessing invariants on randomly generated tables.

use idsx_core::datapipe::{
    Cell, ColumnKind, ColumnSchema, Preprocessor, PreprocessPolicy, RawTable, Schema, UnseenCategory,
};
use proptest::prelude::*;

const PROTOS: [&str; 3] = ["icmp", "tcp", "udp"];

fn schema(numeric: usize) -> Schema {
    let mut cols: Vec<ColumnSchema> = (0..numeric).map(|j| ColumnSchema::new(format!("n{j}"), ColumnKind::Numeric)).collect();
    cols.push(ColumnSchema::new("proto", ColumnKind::Nominal));
    cols.push(ColumnSchema::new("y", ColumnKind::Label));
    Schema::new(cols)
}

fn table(values: &[Vec<f64>], protos: &[usize]) -> RawTable {
    let p = values[0].len();
    let rows = values
        .iter()
        .zip(protos)
        .enumerate()
        .map(|(i, (v, &k))| {
            let mut r: Vec<Option<Cell>> = v.iter().map(|&x| Some(Cell::Num(x))).collect();
            r.push(Some(Cell::Text(PROTOS[k].into())));
            r.push(Some(Cell::Text(if i % 2 == 0 { "a" } else { "b" }.into())));
            r
        })
        .collect();
    RawTable::new(schema(p), rows).unwrap()
}

fn table_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..5, 2usize..40).prop_flat_map(|(p, n)| {
        (
            prop::collection::vec(prop::collection::vec(-1e4f64..1e4, p), n),
            prop::collection::vec(0usize..2, n),
        )
    })
}

proptest! {
    #[test]
    fn fitted_columns_are_standardized((values, protos) in table_strategy()) {
        let t = table(&values, &protos);
        let pre = Preprocessor::fit(&t, PreprocessPolicy::default()).unwrap();
        let d = pre.apply(&t).unwrap();
        let n = d.len() as f64;
        for (j, scale) in pre.scales().iter().enumerate() {
            if scale.is_none() {
                continue;
            }
            let col: Vec<f64> = d.features.iter_rows().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9, "column {} mean {}", j, mean);
            let constant = values.iter().all(|r| r[j] == values[0][j]);
            if constant {
                prop_assert!(col.iter().all(|&v| v == 0.0));
            } else {
                prop_assert!((std - 1.0).abs() < 1e-6, "column {} std {}", j, std);
            }
        }
    }

    #[test]
    fn preprocessing_is_pure((values, protos) in table_strategy()) {
        let t = table(&values, &protos);
        let pre = Preprocessor::fit(&t, PreprocessPolicy::default()).unwrap();
        let a = pre.apply(&t).unwrap();
        let b = pre.apply(&t).unwrap();
        prop_assert_eq!(a.features.as_slice(), b.features.as_slice());
        prop_assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn one_hot_blocks_sum_to_one_for_seen_and_zero_for_unseen((values, protos) in table_strategy()) {
        let t = table(&values, &protos);
        let pre = Preprocessor::fit(&t, PreprocessPolicy::default()).unwrap();
        let block: Vec<usize> = pre
            .output_feature_names()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with("proto="))
            .map(|(j, _)| j)
            .collect();
        for row in pre.apply(&t).unwrap().features.iter_rows() {
            prop_assert_eq!(block.iter().map(|&j| row[j]).sum::<f64>(), 1.0);
        }
        // index 2 ("udp") never appears in the fitting table
        let unseen = table(&values[..1], &[2]);
        let out = pre.apply(&unseen).unwrap();
        prop_assert_eq!(block.iter().map(|&j| out.features.get(0, j)).sum::<f64>(), 0.0);
        let strict = Preprocessor::fit(&t, PreprocessPolicy { unseen_category: UnseenCategory::Error, ..Default::default() }).unwrap();
        prop_assert!(strict.apply(&unseen).is_err());
    }
}
