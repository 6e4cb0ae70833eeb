"""
drpriv: 사유(private) 부하 앙상블 DR 디스패치
"""
