//! Flag value parsing.

use crate::error::CliError;

/// `N` means seeds `0..N`; `a..b` is inclusive at both ends.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Seeds(text.to_string());
    let seeds: Vec<u64> = match text.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            (a..=b).collect()
        }
        None => (0..text.trim().parse::<u64>().map_err(|_| bad())?).collect(),
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Comma-separated probabilities.
pub fn parse_grid(flag: &'static str, text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Grid {
        flag,
        value: text.to_string(),
    };
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(bad());
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_inclusive() {
        assert_eq!(parse_seeds("0..19").unwrap().len(), 20);
        assert_eq!(parse_seeds("3..3").unwrap(), vec![3]);
        assert_eq!(parse_seeds("5").unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(parse_seeds("0").is_err());
        assert!(parse_seeds("4..2").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn grids_stay_in_the_unit_interval() {
        assert_eq!(parse_grid("sigma", "0.1, 0.5,1").unwrap(), vec![0.1, 0.5, 1.0]);
        assert!(parse_grid("rho", "1.2").is_err());
        assert!(parse_grid("rain", "").is_err());
    }
}
