use std::path::PathBuf;

use tafa_core::dataset::{generate_cube, read_csv, CostModel, Dataset};

use crate::config::Resolver;
use crate::{CliError, DataArgs};

pub const DEFAULT_SIGMA: f64 = 0.1;

/// A dataset in raw units with its costs and a short name.
pub struct Source {
    pub name: String,
    pub data: Dataset,
    pub costs: CostModel,
}

/// Resolves `--cube` / `--data`. `seed` is the command's seed, used for
/// generation unless `--data-seed` overrides it.
pub fn resolve(r: &mut Resolver, args: DataArgs, seed: u64) -> Result<Source, CliError> {
    let cube: Option<usize> = r.opt("cube", args.cube)?;
    let path: Option<PathBuf> = r.opt("data", args.data)?;
    match (cube, path) {
        (Some(_), Some(_)) => Err(CliError::Usage("give either --cube or --data, not both".into())),
        (None, None) => Err(CliError::Usage("a dataset is required: --cube N or --data file.csv".into())),
        (Some(n), None) => {
            let sigma = r.or("sigma", args.sigma, DEFAULT_SIGMA)?;
            let data_seed = r.or("data-seed", args.data_seed, seed)?;
            r.seed(data_seed);
            if n < 16 || !(sigma >= 0.0) {
                return Err(CliError::Usage("--cube needs at least 16 rows and sigma >= 0".into()));
            }
            let data = generate_cube(n, sigma, data_seed)?;
            let costs = CostModel::uniform(data.n_features(), 1.0);
            Ok(Source {
                name: "cube".into(),
                data,
                costs,
            })
        }
        (None, Some(path)) => {
            let label = r.or("label-column", args.label_column, "label".to_string())?;
            let cost_path: Option<PathBuf> = r.opt("costs", args.costs)?;
            let (data, costs) = read_csv(&path, &label, cost_path.as_deref())?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into());
            Ok(Source { name, data, costs })
        }
    }
}

pub fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("--{key}: cannot parse `{s}`")))
        })
        .collect()
}
