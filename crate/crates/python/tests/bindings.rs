use pyo3::exceptions::PyValueError;
use pyo3::Python;

use pymoldiff::{alpha_bars, heat_blur, is_valid, normalize_smiles, same_molecule, score, violations, Model};

fn strings(s: &[&str]) -> Vec<String> {
    s.iter().map(|x| x.to_string()).collect()
}

#[test]
fn smiles_helpers() {
    assert!(same_molecule("OCC", &normalize_smiles("CCO").unwrap()).unwrap());
    assert!(!same_molecule("CCO", "COC").unwrap());
    assert!(is_valid("c1ccoc1"));
    assert!(!is_valid("C(C)(C)(C)(C)C"));
    assert!(!is_valid("C.C"));
    assert!(!is_valid("not smiles"));
    assert!(violations("CCO").unwrap().is_empty());
    assert!(!violations("FC(F)(F)(F)F").unwrap().is_empty());
}

#[test]
fn scoring() {
    let s = score(strings(&["CCO", "OCC", "C1CC1", "XX"]), strings(&["CCO"])).unwrap();
    assert_eq!(s["count"], 4.0);
    assert_eq!(s["valid"], 3.0);
    assert_eq!(s["validity"], 75.0);
    assert!((s["uniqueness"] - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!(s["novelty"], 50.0);
}

#[test]
fn numerics() {
    let a = alpha_bars();
    assert_eq!(a.len(), 51);
    assert_eq!(a[0], 1.0);
    assert!((a[1] - 0.9999).abs() < 1e-15);
    let c = heat_blur(vec![2.0; 5], 3.0).unwrap();
    assert!(c.iter().all(|v| (v - 2.0).abs() < 1e-12));
    let b = heat_blur(vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
    assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(b[0] < 1.0 && b[1] > 0.0);
}

#[test]
fn errors_become_value_errors() {
    Python::attach(|py| {
        let err = normalize_smiles("C1CC").unwrap_err();
        assert!(err.is_instance_of::<PyValueError>(py));
        assert!(heat_blur(vec![1.0], -1.0).unwrap_err().is_instance_of::<PyValueError>(py));
        let err = Model::load(r#"{"experiment": "heat_1d", "bogus": 1}"#, None).err().unwrap();
        assert!(err.is_instance_of::<PyValueError>(py));
    });
}
