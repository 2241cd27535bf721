"""Test package for core components.""" 