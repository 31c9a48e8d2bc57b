use hlt::io::{dataset_from_str, dataset_to_string, read_constraint_matrix, read_density_matrix, write_constraint_matrix, write_density_matrix};
use hlt::learning::{build_constraint_matrix, ExpectationSource};
use hlt::measurement::{build_overlapping_plan, sample};
use hlt::pauli::{commutes, pauli_product, PauliString};
use hlt::state::{gibbs_state, transverse_ising};
use proptest::prelude::*;

fn pauli_text(n: usize) -> impl Strategy<Value = String> {
    proptest::collection::vec(prop_oneof![Just('I'), Just('X'), Just('Y'), Just('Z')], n)
        .prop_map(|v| v.into_iter().collect())
}

proptest! {
    #[test]
    fn pauli_text_round_trips(s in (1usize..10).prop_flat_map(pauli_text)) {
        let p: PauliString = s.parse().unwrap();
        prop_assert_eq!(p.to_string(), s);
    }

    #[test]
    fn product_is_associative_up_to_phase(a in pauli_text(5), b in pauli_text(5), c in pauli_text(5)) {
        let (a, b, c): (PauliString, PauliString, PauliString) = (a.parse().unwrap(), b.parse().unwrap(), c.parse().unwrap());
        let (_, ab) = pauli_product(&a, &b).unwrap();
        let (_, bc) = pauli_product(&b, &c).unwrap();
        prop_assert_eq!(pauli_product(&ab, &c).unwrap().1, pauli_product(&a, &bc).unwrap().1);
        prop_assert_eq!(commutes(&a, &b), commutes(&b, &a));
    }
}

#[test]
fn dataset_text_round_trip() {
    let rho = gibbs_state(&transverse_ising(4).unwrap()).unwrap();
    let data = sample(&rho, &build_overlapping_plan(4, 2, 5_000).unwrap(), 3).unwrap();
    let text = dataset_to_string(&data);
    let back = dataset_from_str(&text).unwrap();
    assert_eq!(dataset_to_string(&back), text);
}

#[test]
fn density_matrix_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rho.txt");
    let rho = gibbs_state(&transverse_ising(4).unwrap()).unwrap();
    write_density_matrix(&path, &rho).unwrap();
    let back = read_density_matrix(&path).unwrap();
    for i in 0..16 {
        for j in 0..16 {
            assert_eq!(back.matrix()[(i, j)], rho.matrix()[(i, j)]);
        }
    }
}

#[test]
fn constraint_matrix_csv_round_trip() {
    let rho = gibbs_state(&transverse_ising(4).unwrap()).unwrap();
    let km = build_constraint_matrix(ExpectationSource::State(&rho), 2).unwrap();
    let mut buf = Vec::new();
    write_constraint_matrix(&mut buf, &km).unwrap();
    let (rows, cols, m) = read_constraint_matrix(buf.as_slice()).unwrap();
    assert_eq!(rows.len(), km.nrows());
    assert_eq!(cols.len(), km.ncols());
    assert_eq!(rows[0], km.rows().elements()[0].to_string());
    for i in 0..km.nrows() {
        for j in 0..km.ncols() {
            assert_eq!(m[(i, j)], km.entries()[(i, j)]);
        }
    }
}

#[test]
fn truncated_dataset_reports_line() {
    let err = dataset_from_str("n_qubits 2\nmode exact\nbasis XQ probs 0.25 0.25 0.25 0.25\n").unwrap_err();
    assert!(err.to_string().contains('3'), "{err}");
}
