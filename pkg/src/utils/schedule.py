"""
Learning-rate schedule
"""


def lr_factor(epoch: int, epochs_max: int, power: float) -> float:
    """
    Polynomial decay factor (1 - epoch/epochs_max) ** power.

    Args:
        epoch: Zero-based epoch index, 0 <= epoch < epochs_max
        epochs_max: Total epoch budget
        power: Decay exponent

    Returns:
        Multiplier for the initial learning rate; 1.0 at epoch 0 and
        strictly positive at the final epoch

    Raises:
        ValueError: If epoch is outside [0, epochs_max)

    Examples:
        >>> lr_factor(0, 50, 0.9)
        1.0
        >>> round(lr_factor(25, 50, 0.9), 5)
        0.53589
    """
    if epochs_max < 1:
        raise ValueError(f"epochs_max must be positive, got {epochs_max}")
    if not 0 <= epoch < epochs_max:
        raise ValueError(f"epoch {epoch} outside [0, {epochs_max})")
    return (1.0 - epoch / epochs_max) ** power
