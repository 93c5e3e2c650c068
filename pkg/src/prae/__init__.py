"""Point-cloud autoencoders with multi-head decoders."""
