use crate::data::{AggregationMatrix, LabelHierarchy};

/// The 0/1 matrix with `W[j][s] = 1` exactly when subclass `s` belongs to
/// class `j`. Starts frozen.
pub fn build_aggregation_matrix(h: &LabelHierarchy) -> AggregationMatrix {
    let rows = h.num_classes();
    let parents = h.parents();
    let cols = parents.len();
    let mut weights = vec![0.0; rows * cols];
    for (s, &j) in parents.iter().enumerate() {
        weights[j * cols + s] = 1.0;
    }
    AggregationMatrix::from_parts(rows, parents, weights, false).expect("hierarchy parents are in range")
}
