//! Published parameter tuples and accuracies for the benchmark datasets,
//! used by replay mode and as a reference column in reports.
//!
//! `C0` and `q` were printed rounded to four decimals (`0.0078`, `0.0313`);
//! they are the powers of two of the search grid and are stored exactly.

use super::{CellParams, Family, KernelKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Published {
    pub c0: f64,
    pub q: Option<f64>,
    pub pin_tau: f64,
    /// `(tau1, eps1)`
    pub two: (f64, f64),
    /// `(tau1, tau2, eps1, eps2)`
    pub three: (f64, f64, f64, f64),
    /// Test accuracy of svm, pin, 2pl, 3pl.
    pub accuracy: [f64; 4],
    pub ls_svm_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub number: usize,
    pub name: &'static str,
    pub linear: Published,
    pub rbf: Option<Published>,
}

const P7: f64 = 0.0078125;
const P5: f64 = 0.03125;

const fn lin(c0: f64, pin_tau: f64, two: (f64, f64), three: (f64, f64, f64, f64), accuracy: [f64; 4], ls: f64) -> Published {
    Published { c0, q: None, pin_tau, two, three, accuracy, ls_svm_accuracy: ls }
}

const fn rbf(q: f64, c0: f64, pin_tau: f64, two: (f64, f64), three: (f64, f64, f64, f64), accuracy: [f64; 4], ls: f64) -> Option<Published> {
    Some(Published { c0, q: Some(q), pin_tau, two, three, accuracy, ls_svm_accuracy: ls })
}

pub const ENTRIES: [Entry; 19] = [
    Entry {
        number: 1,
        name: "monk1",
        linear: lin(0.0625, 0.0, (0.0, -5.0), (1.0, -0.6, 1.5, 1.0), [67.593, 67.593, 67.593, 70.139], 66.204),
        rbf: rbf(2.0, 128.0, 0.0, (0.2, 1.0), (0.2, -1.0, 1.0, -5.0), [87.50, 87.50, 88.19, 88.19], 86.81),
    },
    Entry {
        number: 2,
        name: "monk2",
        linear: lin(P7, -0.6, (-0.8, -5.0), (-0.8, -1.0, -3.0, -3.0), [67.13, 67.13, 67.13, 67.361], 67.13),
        rbf: rbf(0.5, 1.0, 0.0, (0.4, 0.5), (1.0, -0.4, 2.0, 0.5), [86.11, 86.11, 86.34, 87.27], 87.04),
    },
    Entry {
        number: 3,
        name: "monk3",
        linear: lin(0.125, -0.6, (-0.4, 0.5), (-0.4, 1.0, 0.5, -3.5), [82.639, 82.639, 85.417, 88.889], 81.481),
        rbf: rbf(4.0, 16.0, 0.0, (0.2, 0.5), (0.2, -1.0, 0.5, -5.0), [94.44, 94.44, 96.53, 96.53], 94.21),
    },
    Entry {
        number: 4,
        name: "spect",
        linear: lin(2.0, -0.8, (-0.8, -0.5), (-0.8, -1.0, -0.5, -5.0), [76.471, 83.957, 83.957, 83.957], 74.332),
        rbf: None,
    },
    Entry {
        number: 5,
        name: "haberman",
        linear: lin(P7, -0.8, (-0.8, 0.0), (1.0, -1.0, 2.0, -5.0), [73.077, 75.641, 75.641, 76.923], 73.077),
        rbf: None,
    },
    Entry {
        number: 6,
        name: "heart",
        linear: lin(0.25, -1.0, (-1.0, -5.0), (-0.4, 0.2, 1.0, -5.0), [85.0, 85.833, 85.833, 87.5], 84.167),
        rbf: rbf(8.0, 2.0, 0.0, (-0.8, 0.5), (-0.8, -1.0, -1.5, -4.0), [85.83, 85.83, 86.67, 86.67], 85.83),
    },
    Entry {
        number: 7,
        name: "ionosphere",
        linear: lin(2.0, 0.0, (0.0, -5.0), (0.0, -1.0, -5.0, -5.0), [92.715, 92.715, 92.715, 92.715], 93.377),
        rbf: None,
    },
    Entry {
        number: 8,
        name: "pima",
        linear: lin(1.0, 0.0, (0.0, -5.0), (0.0, -1.0, -5.0, -5.0), [80.128, 80.128, 80.128, 80.128], 80.128),
        rbf: None,
    },
    Entry {
        number: 9,
        name: "wdbc",
        linear: lin(P5, 0.0, (0.2, 0.5), (0.2, -1.0, 0.5, -5.0), [98.225, 98.225, 98.817, 98.817], 97.041),
        rbf: rbf(4.0, 0.5, 0.0, (0.0, -5.0), (0.2, -0.6, 1.5, 1.0), [98.22, 98.22, 98.22, 98.82], 98.82),
    },
    Entry {
        number: 10,
        name: "echocardiogram",
        linear: lin(0.25, -1.0, (-0.8, -4.5), (1.0, -0.2, 2.0, 0.5), [86.275, 86.275, 92.157, 94.118], 90.196),
        rbf: None,
    },
    Entry {
        number: 11,
        name: "australian",
        linear: lin(0.5, -1.0, (-1.0, -0.5), (-0.8, -0.8, 4.0, -2.0), [84.828, 85.862, 87.241, 87.586], 85.862),
        rbf: None,
    },
    Entry {
        number: 12,
        name: "bupa",
        linear: lin(64.0, 0.0, (-0.2, -5.0), (-0.2, 0.2, -1.0, -5.0), [72.632, 72.632, 73.684, 75.789], 71.579),
        rbf: rbf(2.0, 0.0625, -0.8, (-0.8, 0.0), (-0.8, -0.8, 5.0, -5.0), [85.86, 87.59, 87.59, 87.59], 87.24),
    },
    Entry {
        number: 13,
        name: "votes",
        linear: lin(0.125, 0.0, (0.0, -5.0), (0.0, -1.0, -5.0, -5.0), [95.319, 95.319, 95.319, 95.319], 94.894),
        rbf: rbf(4.0, 128.0, 0.2, (0.2, 0.5), (0.4, 0.2, 0.5, 0.5), [74.74, 75.79, 76.84, 77.90], 75.79),
    },
    Entry {
        number: 14,
        name: "diabetes",
        linear: lin(1.0, -0.2, (0.0, -5.0), (-0.2, 0.8, 0.5, -5.0), [81.716, 81.716, 81.716, 82.836], 81.716),
        rbf: None,
    },
    Entry {
        number: 15,
        name: "fertility",
        linear: lin(P7, -0.2, (-0.8, -5.0), (-0.8, -1.0, -5.0, -5.0), [94.0, 94.0, 94.0, 94.0], 94.0),
        rbf: rbf(8.0, 64.0, 0.0, (0.0, -5.0), (-0.2, 0.2, 0.5, -0.5), [82.46, 82.46, 82.46, 83.96], 82.09),
    },
    Entry {
        number: 16,
        name: "sonar",
        linear: lin(P5, 0.0, (0.0, -5.0), (0.0, -1.0, -5.0, -5.0), [75.926, 75.926, 75.926, 75.926], 73.148),
        rbf: None,
    },
    Entry {
        number: 17,
        name: "ecoli",
        linear: lin(P7, -0.2, (-0.2, 0.0), (-0.2, -1.0, 0.5, 0.5), [94.488, 95.276, 95.276, 95.276], 81.89),
        rbf: None,
    },
    Entry {
        number: 18,
        name: "plrx",
        linear: lin(P7, -1.0, (-1.0, -2.0), (1.0, 0.8, 2.0, -4.0), [67.073, 67.073, 69.512, 70.732], 67.073),
        rbf: None,
    },
    Entry {
        number: 19,
        name: "spambase",
        linear: lin(8.0, 0.0, (0.0, -5.0), (1.0, -0.6, 2.0, -0.5), [88.562, 88.562, 88.562, 89.768], 83.034),
        rbf: None,
    },
];

/// Case-insensitive lookup by dataset name.
pub fn lookup(name: &str) -> Option<&'static Entry> {
    ENTRIES.iter().find(|e| e.name.eq_ignore_ascii_case(name))
}

fn row(entry: &Entry, kernel: KernelKind) -> Option<&Published> {
    match kernel {
        KernelKind::Linear => Some(&entry.linear),
        KernelKind::Rbf(_) => entry.rbf.as_ref(),
    }
}

/// The published tuple of each family, in family order.
pub fn parameters(entry: &Entry, kernel: KernelKind) -> Option<Vec<(Family, CellParams)>> {
    let p = row(entry, kernel)?;
    let cell = |taus: Vec<f64>, epsilons: Vec<f64>| CellParams { c0: p.c0, q: p.q, taus, epsilons };
    let (t1, t2, e1, e2) = p.three;
    Some(vec![
        (Family::Hinge, cell(vec![0.0], vec![0.0])),
        (Family::Pinball, cell(vec![p.pin_tau], vec![0.0])),
        (Family::TwoPiece, cell(vec![p.two.0], vec![p.two.1])),
        (Family::ThreePiece, cell(vec![t1, t2], vec![e1, e2])),
    ])
}

pub fn accuracy(entry: &Entry, kernel: KernelKind, family: Family) -> Option<f64> {
    let p = row(entry, kernel)?;
    let i = Family::ALL.iter().position(|f| *f == family)?;
    Some(p.accuracy[i])
}

pub fn ls_svm_accuracy(entry: &Entry, kernel: KernelKind) -> Option<f64> {
    row(entry, kernel).map(|p| p.ls_svm_accuracy)
}
