from abc import ABC, abstractmethod
from typing import Dict, Tuple

from gexse.data.windows import WindowSet


class SensorDataset(ABC):
    """
    Reader of one published dataset layout
    """
    window_length: int = 0
    stride: int = 0
    label_names: Tuple[str, ...] = ()

    def __init__(self, root: str) -> None:
        self.root = root

    @property
    def name(self) -> str:
        """
        Name of the dataset.
        :return: str representation of the class name
        """
        return self.__class__.__name__

    @classmethod
    @abstractmethod
    def from_config(cls, root: str, config: Dict) -> 'SensorDataset':
        """
        Builds the reader from a run configuration.
        :param root: root directory of the raw dataset
        :param config: validated run configuration
        :return: SensorDataset
        """

    @abstractmethod
    def split(self) -> Tuple[WindowSet, WindowSet]:
        """
        Reads, windows and splits the raw dataset.
        :return: (train, test) raw, unnormalized window sets
        """
