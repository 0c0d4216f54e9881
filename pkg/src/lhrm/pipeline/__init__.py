from .config import RunConfig
from .runner import STAGES, RunDir, run_end_to_end, run_stage
from .split import DatasetSplit, SplitConfig, split_dataset
from .synthetic import DAY, GeneratorConfig, generate_synthetic, topic_mutual_information

__all__ = ["RunConfig", "STAGES", "RunDir", "run_end_to_end", "run_stage", "DatasetSplit",
           "SplitConfig", "split_dataset", "DAY", "GeneratorConfig", "generate_synthetic",
           "topic_mutual_information"]
