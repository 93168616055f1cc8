"""KVW unlearning engine - Source Package."""
