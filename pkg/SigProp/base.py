from torch.utils.data import DataLoader, Subset
from pytorch_lightning.core import LightningModule


class Experiment(LightningModule):
    """
    Monte Carlo Experiment Base Class

    Wraps a randomly initialised network and a dataset of (seed, sequence) tasks.
    Nothing is trained: every task is one predict batch and returns the
    measurements made by ``measure``. ``indices`` restricts a run to a shard of
    the tasks so that shards can be predicted in separate processes.
    """

    def __init__(self, network, dataset, **kwargs):
        super().__init__()
        self.kwargs = kwargs
        self.dataset = dataset
        self.network = network
        self.base_seed = kwargs.get('base_seed', 0)
        self.indices = kwargs.get('indices', None)

    def measure(self, seed_idx, seq_idx, x):
        raise NotImplementedError

    def forward(self, batch):
        seed_idx, seq_idx, x = batch
        return self.measure(int(seed_idx), int(seq_idx), x)

    def predict_step(self, batch, batch_idx, dataloader_idx=0):
        return self.forward(batch)

    def predict_dataloader(self):
        """
        Tasks are served one at a time (batch_size=None) in index order
        """
        tasks = self.dataset if self.indices is None else Subset(self.dataset, self.indices)
        return DataLoader(tasks, batch_size=None, shuffle=False)
