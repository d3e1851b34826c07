from logbook import Logger

log = Logger('anyscene')

# label value of unlabeled pixels, excluded from all losses and metrics
VOID = 255

__all__ = ('log', 'VOID')
