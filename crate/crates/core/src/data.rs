use crate::error::{invalid, Error, Result};
use crate::numkit::Matrix;

/// Response block of a dataset: integer-valued for ordinal models, real for
/// continuous ones. Both are stored row-major with `d` columns.
#[derive(Debug, Clone, PartialEq)]
pub enum Responses {
    Integer { d: usize, values: Vec<i64> },
    Real(Matrix),
}

impl Responses {
    pub fn n(&self) -> usize {
        match self {
            Responses::Integer { d, values } => {
                if *d == 0 {
                    0
                } else {
                    values.len() / d
                }
            }
            Responses::Real(m) => m.rows(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Responses::Integer { d, .. } => *d,
            Responses::Real(m) => m.cols(),
        }
    }
}

/// Responses plus a fixed covariate design.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub responses: Responses,
    pub covariates: Matrix,
    pub response_labels: Vec<String>,
    pub covariate_labels: Vec<String>,
}

impl Dataset {
    pub fn new(responses: Responses, covariates: Matrix) -> Result<Self> {
        let rl = (1..=responses.d()).map(|j| format!("y{j}")).collect();
        let cl = (1..=covariates.cols()).map(|j| format!("x{j}")).collect();
        Self::with_labels(responses, covariates, rl, cl)
    }

    pub fn with_labels(
        responses: Responses,
        covariates: Matrix,
        response_labels: Vec<String>,
        covariate_labels: Vec<String>,
    ) -> Result<Self> {
        if let Responses::Integer { d, values } = &responses {
            if *d == 0 || values.len() % d != 0 {
                return invalid("integer responses do not fill whole rows");
            }
        }
        if responses.n() != covariates.rows() {
            return invalid(format!(
                "{} response rows but {} covariate rows",
                responses.n(),
                covariates.rows()
            ));
        }
        if response_labels.len() != responses.d() || covariate_labels.len() != covariates.cols() {
            return invalid("label count does not match column count");
        }
        Ok(Self { responses, covariates, response_labels, covariate_labels })
    }

    /// Univariate count data.
    pub fn counts(y: Vec<i64>, covariates: Matrix) -> Result<Self> {
        Self::new(Responses::Integer { d: 1, values: y }, covariates)
    }

    pub fn n(&self) -> usize {
        self.responses.n()
    }

    pub fn p(&self) -> usize {
        self.covariates.cols()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.covariates.row(i)
    }

    pub fn int_row(&self, i: usize) -> Result<&[i64]> {
        match &self.responses {
            Responses::Integer { d, values } => Ok(&values[i * d..(i + 1) * d]),
            Responses::Real(_) => invalid("dataset has real-valued responses"),
        }
    }

    pub fn real_row(&self, i: usize) -> Result<&[f64]> {
        match &self.responses {
            Responses::Real(m) => Ok(m.row(i)),
            Responses::Integer { .. } => invalid("dataset has integer responses"),
        }
    }

    pub fn real_responses(&self) -> Result<&Matrix> {
        match &self.responses {
            Responses::Real(m) => Ok(m),
            Responses::Integer { .. } => invalid("dataset has integer responses"),
        }
    }

    /// Rows repeated in order, `times` copies of the whole dataset.
    pub fn repeated(&self, times: usize) -> Self {
        let idx: Vec<usize> = (0..times).flat_map(|_| 0..self.n()).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let responses = match &self.responses {
            Responses::Integer { d, values } => Responses::Integer {
                d: *d,
                values: rows.iter().flat_map(|&i| values[i * d..(i + 1) * d].iter().copied()).collect(),
            },
            Responses::Real(m) => Responses::Real(m.select(rows, &(0..m.cols()).collect::<Vec<_>>())),
        };
        let covariates = self.covariates.select(rows, &(0..self.p()).collect::<Vec<_>>());
        Self {
            responses,
            covariates,
            response_labels: self.response_labels.clone(),
            covariate_labels: self.covariate_labels.clone(),
        }
    }

    /// Replaces the responses, keeping the covariate design.
    pub fn with_responses(&self, responses: Responses) -> Result<Self> {
        Self::with_labels(
            responses,
            self.covariates.clone(),
            self.response_labels.clone(),
            self.covariate_labels.clone(),
        )
    }
}

pub(crate) fn require_nonempty(data: &Dataset) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    Ok(())
}
