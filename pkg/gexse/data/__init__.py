""" Sensor dataset support """
import enum
import logging
from typing import Dict, Tuple

from gexse.data.interface import SensorDataset
from gexse.data.opportunity import Opportunity
from gexse.data.pamap2 import PAMAP2
from gexse.data.ucihar import UCIHAR
from gexse.data.windows import WindowSet, normalize_split
from gexse.misc import ConfigError

logger = logging.getLogger(__name__)


class Datasets(enum.Enum):
    """
    Maps supported dataset ids to correspondent reader classes.
    """
    PAMAP2 = PAMAP2
    UCIHAR = UCIHAR
    OPPORTUNITY = Opportunity


def get_dataset(dataset_id: str, root: str, config: Dict) -> SensorDataset:
    """
    Finds the reader of the given dataset id
    :param dataset_id: pamap2, ucihar or opportunity
    :param root: root directory of the raw dataset
    :param config: run configuration
    :return: SensorDataset
    """
    try:
        dataset_class = Datasets[dataset_id.upper()].value
    except KeyError:
        raise ConfigError('Dataset {} is not supported'.format(dataset_id))
    return dataset_class.from_config(root, config)


def ingest(dataset_id: str, root: str, config: Dict) -> Tuple[WindowSet, WindowSet]:
    """
    Reads, windows, splits and normalizes a raw dataset
    :return: (train, test) normalized with training statistics
    """
    dataset = get_dataset(dataset_id, root, config)
    logger.info('Ingesting %s from %s ...', dataset.name, root)
    train, test = normalize_split(*dataset.split())
    logger.info('%s: %d train / %d test windows of %d×%d',
                dataset.name, train.num_windows, test.num_windows, train.channels, train.length)
    return train, test
