use crate::error::QueueError;

const SUM_TOLERANCE: f64 = 1e-9;

/// Rounds a nonnegative vector with integer sum to a nonnegative integer
/// vector with the same sum: every coordinate is floored and the total
/// fractional mass is given to the last coordinate.
pub fn varpi(z: &[f64]) -> Result<Vec<u64>, QueueError> {
    let mut out = vec![0; z.len()];
    varpi_into(z, &mut out)?;
    Ok(out)
}

pub fn varpi_into(z: &[f64], out: &mut [u64]) -> Result<(), QueueError> {
    debug_assert_eq!(z.len(), out.len());
    let Some(last) = z.len().checked_sub(1) else {
        return Ok(());
    };
    let sum: f64 = z.iter().sum();
    if (sum - sum.round()).abs() > SUM_TOLERANCE * sum.abs().max(1.0) {
        return Err(QueueError::NonIntegerSum { sum });
    }
    let mut fractional = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        // Values a hair below zero are rounding noise from (e·x − n)⁺·v.
        if v < -SUM_TOLERANCE {
            return Err(QueueError::NegativeComponent { value: v });
        }
        let v = v.max(0.0);
        let floor = v.floor();
        fractional += v - floor;
        *o = floor as u64;
    }
    out[last] += fractional.round() as u64;
    Ok(())
}
